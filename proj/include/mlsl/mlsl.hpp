#pragma once
/// @file mlsl.hpp
/// @brief Umbrella header.

#include "core.hpp"
#include "container.hpp"
#include "rng.hpp"
#include "characteristics.hpp"
#include "classic_sl.hpp"
#include "weno.hpp"
#include "json_io.hpp"
#include "datagen.hpp"
#include "nnet.hpp"
#include "training.hpp"
#include "simulate.hpp"
#include "config.hpp"
#include "benchmark.hpp"
