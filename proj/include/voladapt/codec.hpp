// Wire encodings shared by the proposer protocol and the CLI.

#ifndef VOLADAPT_CODEC_HPP
#define VOLADAPT_CODEC_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "voladapt/curation.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

/// Alternating background/foreground run lengths over the row-major pixels,
/// starting with a background run (zero when the first pixel is foreground).
std::vector<std::uint32_t> rle_encode(const SliceMask2D& m);

/// Accepts zero-length runs anywhere. Throws std::invalid_argument unless the
/// runs sum to h * w.
SliceMask2D rle_decode(std::span<const std::uint32_t> runs, std::uint32_t h, std::uint32_t w);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Little-endian float32 bytes, base64 encoded.
std::string encode_f32_b64(std::span<const float> values);
std::vector<float> decode_f32_b64(const std::string& text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Proposal files: one JSON object per line,
/// {"case","slice","bbox":[r0,r1,c0,c1],"h","w","rle","conf"}.
std::string proposal_line(const std::string& case_id, const SliceProposal& p);

/// Groups lines by case id; each group is sorted by slice index. Throws
/// std::invalid_argument naming the line number on malformed input.
std::map<std::string, std::vector<SliceProposal>> parse_proposals(const std::string& text);

}  // namespace voladapt

#endif  // VOLADAPT_CODEC_HPP
