#pragma once

#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"
#include "gridalign/rng.hpp"
#include "gridalign/core_grid.hpp"
#include "gridalign/synth.hpp"
#include "gridalign/density.hpp"
#include "gridalign/criterion.hpp"
#include "gridalign/train.hpp"
#include "gridalign/baselines.hpp"
#include "gridalign/eval.hpp"
#include "gridalign/io.hpp"
#include "gridalign/config.hpp"
