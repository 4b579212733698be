#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "seqdistill/dataio.hpp"
#include "seqdistill/errors.hpp"
#include "seqdistill/matrix.hpp"

namespace seqdistill {

// Named-tensor container used for checkpoints. Little-endian binary:
//   magic "CGNT" | version u16 = 1 | count u32
//   per tensor: name_len u16 | name bytes | rows u32 | cols u32 |
//               rows*cols float64
// Round trips are bit-exact.

struct NamedTensor {
    std::string name;
    Matrix values;
};

inline constexpr char kTensorMagic[4] = {'C', 'G', 'N', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;

namespace detail {

inline void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

} // namespace detail

inline void write_tensor_file(const std::vector<NamedTensor>& tensors, const std::string& path) {
    std::string out;
    out.append(kTensorMagic, 4);
    detail::put_u16(out, kTensorVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.append(t.name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.values.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.values.cols()));
        for (double v : t.values.values()) detail::put_f64(out, v);
    }
    detail::spill_file(path, out, "write_tensor_file");
}

inline std::vector<NamedTensor> read_tensor_file(const std::string& path) {
    const std::string bytes = detail::slurp_file(path, "read_tensor_file");
    detail::ByteReader reader(bytes, "read_tensor_file");
    if (reader.raw(4) != std::string(kTensorMagic, 4))
        throw FormatError("read_tensor_file: bad magic in " + path);
    const std::uint16_t version = reader.u16();
    if (version != kTensorVersion)
        throw FormatError("read_tensor_file: unsupported version " + std::to_string(version));

    std::vector<NamedTensor> tensors;
    const std::uint32_t count = reader.u32();
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = reader.u16();
        t.name = reader.raw(name_len);
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        t.values = Matrix(rows, cols);
        for (double& v : t.values.values()) {
            std::uint64_t bits = reader.u32();
            bits |= static_cast<std::uint64_t>(reader.u32()) << 32;
            v = std::bit_cast<double>(bits);
        }
        tensors.push_back(std::move(t));
    }
    if (!reader.exhausted())
        throw FormatError("read_tensor_file: trailing bytes at offset " +
                          std::to_string(reader.position()));
    return tensors;
}

} // namespace seqdistill
