#pragma once

// Everything at once.

#include "gridplan/baselines.hpp"
#include "gridplan/cli.hpp"
#include "gridplan/core.hpp"
#include "gridplan/grasp_env.hpp"
#include "gridplan/grasp_generate.hpp"
#include "gridplan/harness.hpp"
#include "gridplan/llm_gateway.hpp"
#include "gridplan/minigrid_env.hpp"
#include "gridplan/minigrid_generate.hpp"
#include "gridplan/policy_protocol.hpp"
#include "gridplan/prompt_kit.hpp"
#include "gridplan/refinement.hpp"
