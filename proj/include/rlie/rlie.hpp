#pragma once

#include "rlie/errors.hpp"
#include "rlie/rng.hpp"
#include "rlie/core.hpp"
#include "rlie/dataset.hpp"
#include "rlie/prompt.hpp"
#include "rlie/backend.hpp"
#include "rlie/judge.hpp"
#include "rlie/genesis.hpp"
#include "rlie/combiner.hpp"
#include "rlie/metrics.hpp"
#include "rlie/loop.hpp"
#include "rlie/eval.hpp"
#include "rlie/synthetic.hpp"
#include "rlie/openai_backend.hpp"
#include "rlie/config.hpp"
#include "rlie/cli.hpp"
