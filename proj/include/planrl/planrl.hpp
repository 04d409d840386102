#pragma once

#include "planrl/agent.hpp"
#include "planrl/binary_io.hpp"
#include "planrl/env.hpp"
#include "planrl/error.hpp"
#include "planrl/expert.hpp"
#include "planrl/harness.hpp"
#include "planrl/imitation.hpp"
#include "planrl/mode_waypoint.hpp"
#include "planrl/planner.hpp"
#include "planrl/rng.hpp"
#include "planrl/td3.hpp"
#include "planrl/tensor.hpp"
