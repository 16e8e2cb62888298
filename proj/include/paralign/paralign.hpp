#pragma once

#include "paralign/error.hpp"
#include "paralign/rng.hpp"
#include "paralign/core.hpp"
#include "paralign/tensor.hpp"
#include "paralign/synthworld.hpp"
#include "paralign/judge.hpp"
#include "paralign/trunk.hpp"
#include "paralign/grpo_objective.hpp"
#include "paralign/policy.hpp"
#include "paralign/optim.hpp"
#include "paralign/checkpoint.hpp"
#include "paralign/sft.hpp"
#include "paralign/reward.hpp"
#include "paralign/grpo.hpp"
#include "paralign/config.hpp"
#include "paralign/io.hpp"
#include "paralign/pipeline.hpp"
