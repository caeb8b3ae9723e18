#pragma once

#include "optpolicy/benchmark.hpp"
#include "optpolicy/core_model.hpp"
#include "optpolicy/error.hpp"
#include "optpolicy/forest.hpp"
#include "optpolicy/matrix.hpp"
#include "optpolicy/policy_learner.hpp"
#include "optpolicy/reward_estimation.hpp"
#include "optpolicy/synthetic.hpp"
#include "optpolicy/table_io.hpp"
#include "optpolicy/tree_io.hpp"
