#pragma once

// Umbrella header.

#include "mpt/dsl.hpp"
#include "mpt/estimation.hpp"
#include "mpt/io.hpp"
#include "mpt/model.hpp"
#include "mpt/patterns.hpp"
#include "mpt/polytope.hpp"
#include "mpt/random.hpp"
#include "mpt/rational.hpp"
#include "mpt/reparam.hpp"
#include "mpt/selection.hpp"
