#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stroke/params.hpp"
#include "stroke/tensor.hpp"

namespace stroke {

/// Named-tensor container: 8-byte magic, u64 little-endian header length, a
/// JSON header {"meta": ..., "tensors": [{name, shape, dtype, offset}...]},
/// then the raw float64 payload in header order. Writing is canonical (sorted
/// JSON keys, fixed layout), so load followed by save is byte-identical.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Archive {
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                   const nlohmann::json& meta);
Archive read_archive(const std::filesystem::path& path);

/// Store parameters in creation order.
void write_store_archive(const std::filesystem::path& path, const ParamStore& store, const nlohmann::json& meta);

/// Copies archive tensors into matching store parameters. Any missing,
/// unexpected, or shape-mismatched name raises a SchemaError naming every
/// offender.
void load_archive_into_store(const Archive& a, ParamStore& store);

}  // namespace stroke
