#include "savad/checkpoint.hpp"

#include <cmath>
#include <fstream>

#include "savad/binary_io.hpp"

namespace savad {

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    ByteWriter w;
    w.bytes("SAVD");
    w.u32(kCheckpointVersion);
    for (const auto& a : arrays) {
        if (a.name.size() > 0xFFFF) throw ConfigError("parameter name too long: " + a.name);
        if (a.extents.size() > 0xFF) throw ConfigError("parameter rank too large: " + a.name);
        w.u16(static_cast<std::uint16_t>(a.name.size()));
        w.bytes(a.name);
        w.u8(static_cast<std::uint8_t>(a.extents.size()));
        std::size_t count = 1;
        for (std::uint32_t e : a.extents) {
            w.u32(e);
            count *= e;
        }
        if (count != a.values.size()) throw ShapeError("parameter " + a.name + ": extents do not match value count");
        for (float v : a.values) w.f32(v);
    }
    write_file(path, w.buffer());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    ByteReader r(data, path.string());
    if (r.bytes(4) != "SAVD") throw MagicError(path.string() + ": not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::vector<NamedArray> arrays;
    while (!r.done()) {
        NamedArray a;
        const std::uint16_t len = r.u16();
        a.name = r.bytes(len);
        const std::uint8_t rank = r.u8();
        std::size_t count = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            a.extents.push_back(r.u32());
            count *= a.extents.back();
        }
        r.require(count * 4, a.name);
        a.values.resize(count);
        for (auto& v : a.values) {
            v = r.f32();
            if (!std::isfinite(v)) throw NonFiniteError(path.string() + ": non-finite value in " + a.name);
        }
        arrays.push_back(std::move(a));
    }
    return arrays;
}

}  // namespace savad
