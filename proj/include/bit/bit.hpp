#pragma once

#include "bit/agent.hpp"
#include "bit/analysis.hpp"
#include "bit/augment.hpp"
#include "bit/bit_learner.hpp"
#include "bit/config.hpp"
#include "bit/env_toy.hpp"
#include "bit/errors.hpp"
#include "bit/feature_extractor.hpp"
#include "bit/replay.hpp"
#include "bit/sac.hpp"
#include "bit/trainer.hpp"
