#pragma once

#include <string>

#include "mosformer/params.hpp"

namespace mosf {

// MOSF container: magic "MOSF", format version u32, then repeated records
// (name length u32, name bytes, dtype tag u8 (0=f32,1=f64), rank u32,
// extents u64 x rank, raw little-endian data). Records follow the store's
// registration order, so save -> load -> save is byte-identical.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store);

// Strict load: every record must match a registered tensor's name and shape,
// and every registered tensor must be filled. The stored scalar type is
// converted to T when they differ.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& store);

}  // namespace mosf
