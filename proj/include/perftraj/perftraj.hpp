#pragma once
// Umbrella header.

#include "adaptive_mh.hpp"
#include "bernstein.hpp"
#include "chain.hpp"
#include "design.hpp"
#include "io.hpp"
#include "model.hpp"
#include "random.hpp"
#include "sampler.hpp"
#include "simgen.hpp"
#include "summaries.hpp"
