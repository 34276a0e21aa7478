#include "fdg/serial.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fdg/errors.hpp"
#include "fdg/numerics.hpp"

namespace fdg {

namespace {

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64_le(std::string& out, double v) {
    append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

void append_f32_le(std::string& out, float v) {
    append_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

void write_blob(const BlobFile& blob, const std::string& path) {
    if (blob.magic.size() != 4) throw UsageError("write_blob: magic must be 4 bytes");
    const std::string descriptor = blob.descriptor.dump();
    std::string out;
    out.reserve(12 + descriptor.size() + 8 * blob.payload.size());
    out += blob.magic;
    append_u32_le(out, blob.version);
    append_u32_le(out, static_cast<std::uint32_t>(descriptor.size()));
    out += descriptor;
    for (double v : blob.payload) append_f64_le(out, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("write failed: " + path);
}

BlobFile read_blob(const std::string& path, const std::string& expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 12) throw FormatError("truncated file: " + path);
    BlobFile blob;
    blob.magic = bytes.substr(0, 4);
    if (blob.magic != expected_magic) {
        throw FormatError("bad magic in " + path + ": expected " + expected_magic);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    blob.version = read_u32_le(p + 4);
    const std::uint32_t desc_len = read_u32_le(p + 8);
    if (bytes.size() < 12u + desc_len) throw FormatError("truncated descriptor: " + path);
    const std::string descriptor = bytes.substr(12, desc_len);
    try {
        blob.descriptor = nlohmann::json::parse(descriptor);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt descriptor in " + path + ": " + e.what());
    }

    const std::size_t payload_bytes = bytes.size() - 12 - desc_len;
    if (payload_bytes % 8 != 0) throw FormatError("truncated payload: " + path);
    blob.payload.resize(payload_bytes / 8);
    const unsigned char* q = p + 12 + desc_len;
    for (std::size_t i = 0; i < blob.payload.size(); ++i) {
        const std::uint64_t bits = read_u64_le(q + 8 * i);
        blob.payload[i] = std::bit_cast<double>(bits);
    }
    return blob;
}

}  // namespace fdg
