#pragma once

#include "binary_io.h"
#include "koi/mlp.h"

namespace koi::detail {

void write_mlp(BinaryWriter& w, const Mlp& m);
Mlp read_mlp(BinaryReader& r);

}  // namespace koi::detail
