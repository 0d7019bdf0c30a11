#pragma once

#include "hqc/errors.hpp"
#include "hqc/grid.hpp"
#include "hqc/solver.hpp"
#include "hqc/potential.hpp"
#include "hqc/model.hpp"
#include "hqc/cell.hpp"
#include "hqc/hqc.hpp"
#include "hqc/lattice2d.hpp"
#include "hqc/experiments.hpp"
