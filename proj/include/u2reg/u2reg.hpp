#ifndef U2REG_U2REG_HPP
#define U2REG_U2REG_HPP

#include "matrix.hpp"
#include "rng.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "synthdata.hpp"
#include "grad_engine.hpp"
#include "optim.hpp"
#include "io.hpp"
#include "eval.hpp"

#endif  // U2REG_U2REG_HPP
