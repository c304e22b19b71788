// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "loom/adam.hpp"
#include "loom/adaptation.hpp"
#include "loom/baselines.hpp"
#include "loom/checkpoint.hpp"
#include "loom/common.hpp"
#include "loom/data.hpp"
#include "loom/grad_check.hpp"
#include "loom/graph.hpp"
#include "loom/harness.hpp"
#include "loom/mask.hpp"
#include "loom/mask_registry.hpp"
#include "loom/metrics.hpp"
#include "loom/model.hpp"
#include "loom/pruning.hpp"
#include "loom/trainer.hpp"
