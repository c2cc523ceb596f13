#pragma once

#include <string>

#include "daf/model.hpp"

namespace daf::nn {

// Parameter container, version 1. Little-endian layout:
//   "DAFW" | u32 version | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 values
// Values are stored as f32; loading widens them back to f64.
void save_params(const ParamStore& ps, const std::string& path);
ParamStore load_params(const std::string& path);

// Rounds every value to its nearest f32 in place. A store that has been
// quantized survives a save/load round trip bitwise, which is what makes
// checkpoint resumption reproduce the original run exactly.
void quantize_f32(ParamStore& ps);

// String-valued entries (one character per value), e.g. "meta.role".
// set_meta replaces an existing entry of the same name.
void set_meta(ParamStore& ps, const std::string& name, const std::string& value);
std::string get_meta(const ParamStore& ps, const std::string& name);  // "" when absent

}  // namespace daf::nn
