#pragma once

// Convenience include for the whole library. The command-line front end
// (paretoq/cli.hpp) is left out because it additionally depends on the
// vendored CLI11 and JSON single headers.

#include "paretoq/errors.hpp"
#include "paretoq/matrix.hpp"
#include "paretoq/quant.hpp"
#include "paretoq/bitpack.hpp"
#include "paretoq/qgemm.hpp"
#include "paretoq/autodiff.hpp"
#include "paretoq/optim.hpp"
#include "paretoq/dataset.hpp"
#include "paretoq/qat.hpp"
#include "paretoq/pareto.hpp"
