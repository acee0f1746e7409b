#pragma once

// Umbrella header: the whole library.

#include "gcpo/advantage.hpp"
#include "gcpo/analysis.hpp"
#include "gcpo/config.hpp"
#include "gcpo/error.hpp"
#include "gcpo/grid.hpp"
#include "gcpo/objective.hpp"
#include "gcpo/policy.hpp"
#include "gcpo/rewards.hpp"
#include "gcpo/rng.hpp"
#include "gcpo/selection.hpp"
#include "gcpo/token_stats.hpp"
#include "gcpo/trainer.hpp"
