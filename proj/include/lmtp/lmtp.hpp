#pragma once

#include "lmtp/core.hpp"
#include "lmtp/crossfit.hpp"
#include "lmtp/csv.hpp"
#include "lmtp/data.hpp"
#include "lmtp/density_ratio.hpp"
#include "lmtp/estimators.hpp"
#include "lmtp/learners.hpp"
#include "lmtp/parallel.hpp"
#include "lmtp/pipeline.hpp"
#include "lmtp/policy.hpp"
#include "lmtp/random.hpp"
#include "lmtp/simulation/dgp.hpp"
#include "lmtp/simulation/study.hpp"
#include "lmtp/simulation/toy.hpp"
