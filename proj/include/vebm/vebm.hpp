#pragma once

#include "vebm/adam.hpp"
#include "vebm/baseline.hpp"
#include "vebm/core.hpp"
#include "vebm/eval.hpp"
#include "vebm/io.hpp"
#include "vebm/mixture.hpp"
#include "vebm/model.hpp"
#include "vebm/parallel.hpp"
#include "vebm/synth.hpp"
#include "vebm/transport.hpp"
