// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cgan.hpp
 * @brief  Umbrella header.
 */
#pragma once

#include "checkpoint.hpp"
#include "compositor.hpp"
#include "conditioner.hpp"
#include "config.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "layers.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "nets.hpp"
#include "optim.hpp"
#include "png_io.hpp"
#include "runtime.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
