#include "voladapt/codec.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace voladapt {

std::vector<std::uint32_t> rle_encode(const SliceMask2D& m) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : m.data()) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

SliceMask2D rle_decode(std::span<const std::uint32_t> runs, std::uint32_t h, std::uint32_t w) {
  const std::uint64_t expected = static_cast<std::uint64_t>(h) * w;
  std::uint64_t total = 0;
  for (std::uint32_t r : runs) total += r;
  if (total != expected) {
    throw std::invalid_argument("RLE runs sum to " + std::to_string(total) + ", expected " +
                                std::to_string(expected));
  }
  std::vector<std::uint8_t> data;
  data.reserve(expected);
  std::uint8_t value = 0;
  for (std::uint32_t r : runs) {
    data.insert(data.end(), r, value);
    value ^= 1;
  }
  return SliceMask2D(h, w, std::move(data));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  if (bytes.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("malformed base64");
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode_f32_b64(std::span<const float> values) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  std::vector<std::uint8_t> bytes(values.size() * 4);
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return base64_encode(bytes);
}

std::vector<float> decode_f32_b64(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw std::invalid_argument("float payload is not a multiple of 4 bytes");
  std::vector<float> out(bytes.size() / 4);
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string proposal_line(const std::string& case_id, const SliceProposal& p) {
  nlohmann::ordered_json j;
  j["case"] = case_id;
  j["slice"] = p.slice_index;
  j["bbox"] = {p.bbox.row_min, p.bbox.row_max, p.bbox.col_min, p.bbox.col_max};
  j["h"] = p.mask.height();
  j["w"] = p.mask.width();
  j["rle"] = rle_encode(p.mask);
  j["conf"] = p.confidence;
  return j.dump();
}

std::map<std::string, std::vector<SliceProposal>> parse_proposals(const std::string& text) {
  std::map<std::string, std::vector<SliceProposal>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto h = j.at("h").get<std::uint32_t>();
      const auto w = j.at("w").get<std::uint32_t>();
      const auto b = j.at("bbox").get<std::vector<std::uint32_t>>();
      if (b.size() != 4) throw std::invalid_argument("bbox needs 4 values");
      BBox2D box{b[0], b[1], b[2], b[3]};
      box.validate(h, w);
      const double conf = j.at("conf").get<double>();
      if (!(conf >= 0.0 && conf <= 1.0)) throw std::invalid_argument("conf outside [0, 1]");
      const auto runs = j.at("rle").get<std::vector<std::uint32_t>>();
      out[j.value("case", std::string{})].push_back({j.at("slice").get<std::uint32_t>(), rle_decode(runs, h, w), conf, box});
    } catch (const std::exception& e) {
      throw std::invalid_argument("proposals line " + std::to_string(n) + ": " + e.what());
    }
  }
  for (auto& [id, v] : out) {
    std::stable_sort(v.begin(), v.end(), [](const SliceProposal& a, const SliceProposal& b) {
      return a.slice_index < b.slice_index;
    });
  }
  return out;
}

}  // namespace voladapt
