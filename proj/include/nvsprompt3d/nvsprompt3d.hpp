// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/eval.hpp>
#include <nvsprompt3d/fusion.hpp>
#include <nvsprompt3d/geometry.hpp>
#include <nvsprompt3d/image_io.hpp>
#include <nvsprompt3d/parallel.hpp>
#include <nvsprompt3d/pipeline.hpp>
#include <nvsprompt3d/ply.hpp>
#include <nvsprompt3d/prompts.hpp>
#include <nvsprompt3d/provider.hpp>
#include <nvsprompt3d/scene_io.hpp>
#include <nvsprompt3d/splat.hpp>
#include <nvsprompt3d/synthetic.hpp>
#include <nvsprompt3d/types.hpp>
