#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/tensor.hpp"

// Parameter snapshot files. Layout:
//   magic "SEPPW1\0"
//   repeated until EOF:
//     name length  u64 LE
//     name bytes
//     rank         u64 LE
//     dims         u64 LE each
//     data         f32 LE, row-major
// Round-trips are bit-exact, so snapshots double as reproducibility receipts.

namespace sepp {

inline constexpr char kWeightsMagic[7] = {'S', 'E', 'P', 'P', 'W', '1', '\0'};

struct WeightRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void save_weight_records(const std::string& path,
                                const std::vector<WeightRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open ", path, " for writing");
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    for (const WeightRecord& rec : records) {
        require(shape_numel(rec.shape) == rec.data.size(), "weight ", rec.name,
                ": shape ", shape_str(rec.shape), " does not match ", rec.data.size(),
                " values");
        write_u64_le(out, rec.name.size());
        out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
        write_u64_le(out, rec.shape.size());
        for (std::size_t d : rec.shape) {
            write_u64_le(out, d);
        }
        write_f32_le(out, rec.data.data(), rec.data.size());
    }
    require(out.good(), "write failed for ", path);
}

inline std::vector<WeightRecord> load_weight_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open ", path);
    char magic[sizeof(kWeightsMagic)];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) &&
                std::equal(magic, magic + sizeof(magic), kWeightsMagic),
            path, ": not a parameter snapshot file (bad magic)");
    std::vector<WeightRecord> records;
    while (true) {
        in.peek();
        if (in.eof()) {
            break;
        }
        WeightRecord rec;
        const std::uint64_t name_len = read_u64_le(in, "weight name length");
        require(name_len > 0 && name_len < (1u << 20), path, ": implausible name length ",
                name_len);
        rec.name.resize(name_len);
        in.read(rec.name.data(), static_cast<std::streamsize>(name_len));
        require(static_cast<std::uint64_t>(in.gcount()) == name_len,
                "truncated input while reading weight name");
        const std::uint64_t rank = read_u64_le(in, "weight rank");
        require(rank <= 8, path, ": implausible rank ", rank, " for ", rec.name);
        rec.shape.resize(rank);
        std::uint64_t numel = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            rec.shape[i] = read_u64_le(in, "weight dimension");
            numel *= rec.shape[i];
            require(numel < (1ull << 32), path, ": implausible size for ", rec.name);
        }
        rec.data.resize(numel);
        read_f32_le(in, rec.data.data(), rec.data.size(), "weight data");
        records.push_back(std::move(rec));
    }
    return records;
}

/// Snapshot a named parameter list (values only; gradients are not persisted).
template <typename Real>
void save_parameters(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<Real>>>& params) {
    std::vector<WeightRecord> records;
    records.reserve(params.size());
    for (const auto& [name, tensor] : params) {
        WeightRecord rec;
        rec.name = name;
        rec.shape = tensor.shape();
        rec.data.reserve(tensor.numel());
        for (Real v : tensor.values()) {
            rec.data.push_back(static_cast<float>(v));
        }
        records.push_back(std::move(rec));
    }
    save_weight_records(path, records);
}

/// Load a snapshot into existing parameters; every parameter must be present
/// with a matching shape, extra records in the file are an error.
template <typename Real>
void load_parameters(const std::string& path,
                     std::vector<std::pair<std::string, Tensor<Real>>>& params) {
    std::vector<WeightRecord> records = load_weight_records(path);
    std::size_t used = 0;
    for (auto& [name, tensor] : params) {
        const WeightRecord* found = nullptr;
        for (const WeightRecord& rec : records) {
            if (rec.name == name) {
                found = &rec;
                break;
            }
        }
        require(found != nullptr, path, ": snapshot is missing parameter ", name);
        require(found->shape == tensor.shape(), path, ": parameter ", name, " has shape ",
                shape_str(found->shape), ", expected ", shape_str(tensor.shape()));
        auto& dst = tensor.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = static_cast<Real>(found->data[i]);
        }
        ++used;
    }
    require(used == records.size(), path, ": snapshot holds ", records.size(),
            " tensors but the model expects ", params.size());
}

} // namespace sepp
