#ifndef FDG_SERIAL_HPP
#define FDG_SERIAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace fdg {

// Common on-disk container for model files:
//   magic (4 bytes) | u32 version (LE) | u32 descriptor length (LE)
//   | UTF-8 JSON descriptor | little-endian f64 payload
// The descriptor's "tensors" array fixes payload order; payload size must
// match the descriptor exactly. Layout details live in docs/FORMATS.md.
struct BlobFile {
    std::string magic;  // exactly 4 characters
    std::uint32_t version = 1;
    nlohmann::json descriptor;
    std::vector<double> payload;
};

void write_blob(const BlobFile& blob, const std::string& path);
BlobFile read_blob(const std::string& path, const std::string& expected_magic);

// Little-endian scalar helpers shared with the dataset format.
void append_u32_le(std::string& out, std::uint32_t v);
void append_u64_le(std::string& out, std::uint64_t v);
void append_f64_le(std::string& out, double v);
void append_f32_le(std::string& out, float v);

}  // namespace fdg

#endif
