#pragma once

#include "rfpt/attribution.hpp"
#include "rfpt/benchmark.hpp"
#include "rfpt/config.hpp"
#include "rfpt/error.hpp"
#include "rfpt/fingerprint.hpp"
#include "rfpt/geometry.hpp"
#include "rfpt/io.hpp"
#include "rfpt/nnet.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/pipeline.hpp"
#include "rfpt/random.hpp"
#include "rfpt/vae.hpp"
