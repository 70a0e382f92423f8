#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/params.hpp"

#include <string>

namespace trifuse {

/// Registers `name`.weight (out x in, fan-in uniform) and `name`.bias (zeros).
inline void add_linear(ParamStore& params, const std::string& name, Index out, Index in,
                       std::uint64_t seed)
{
    params.add(name + ".weight", fan_in_uniform(out, in, seed, name + ".weight"));
    params.add(name + ".bias", Matrix::Zero(1, out));
}

inline Var linear(Tape& tape, const Var& x, const std::string& name)
{
    return dense(x, tape.param(name + ".weight"), tape.param(name + ".bias"));
}

} // namespace trifuse
