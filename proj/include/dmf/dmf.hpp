#pragma once

#include "dmf/checkpoint.hpp"
#include "dmf/cli.hpp"
#include "dmf/config.hpp"
#include "dmf/curriculum.hpp"
#include "dmf/dual.hpp"
#include "dmf/error.hpp"
#include "dmf/evalsuite.hpp"
#include "dmf/losses.hpp"
#include "dmf/network.hpp"
#include "dmf/paths.hpp"
#include "dmf/rng.hpp"
#include "dmf/tensor.hpp"
#include "dmf/trainer.hpp"
