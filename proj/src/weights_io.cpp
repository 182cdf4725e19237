// Weight file: "NSL1", u32 LE header length, JSON header, then row-major
// little-endian f32 blobs. Header offsets are relative to the first blob byte.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "langsteer/error.hpp"
#include "langsteer/model.hpp"

namespace langsteer {
namespace {

constexpr char kMagic[4] = {'N', 'S', 'L', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},
          {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"ffn_kind", to_string(c.ffn_kind)}, {"rng_seed", c.rng_seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.ffn_kind = parse_ffn_kind(j.at("ffn_kind").get<std::string>());
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return c;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : model.tensors()) {
    const std::size_t nbytes = t.data.size() * sizeof(float);
    index.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json header = {{"config", config_to_json(model.config())},
                           {"tensors", index},
                           {"blob_bytes", offset}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : model.tensors()) {
    for (float w : t.data) put_u32(out, std::bit_cast<std::uint32_t>(w));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open weight file '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 8) {
    throw FormatError("truncated weight file: " + std::to_string(bytes.size()) +
                      " bytes, need at least 8 at offset 0");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic at offset 0 (expected \"NSL1\")");
  }
  const std::uint32_t header_len = get_u32(data + 4);
  const std::size_t blob_start = 8 + static_cast<std::size_t>(header_len);
  if (blob_start > bytes.size()) {
    throw FormatError("header length " + std::to_string(header_len) + " at offset 4 runs past end of file (" +
                      std::to_string(bytes.size()) + " bytes)");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(blob_start));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header at offset 8: ") + e.what());
  }

  ModelConfig config;
  std::vector<Tensor> tensors;
  std::size_t blob_bytes = 0;
  try {
    config = config_from_json(header.at("config"));
    blob_bytes = header.at("blob_bytes").get<std::size_t>();
    for (const auto& entry : header.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto off = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      if (nbytes != t.numel() * sizeof(float)) {
        throw FormatError("tensor '" + t.name + "' declares " + std::to_string(nbytes) +
                          " bytes but its shape needs " + std::to_string(t.numel() * sizeof(float)));
      }
      if (off + nbytes > blob_bytes) {
        throw FormatError("tensor '" + t.name + "' at blob offset " + std::to_string(off) +
                          " overruns declared blob size " + std::to_string(blob_bytes));
      }
      if (blob_start + off + nbytes > bytes.size()) {
        throw FormatError("truncated blob: tensor '" + t.name + "' needs bytes up to file offset " +
                          std::to_string(blob_start + off + nbytes) + " but file ends at " +
                          std::to_string(bytes.size()));
      }
      t.data.resize(t.numel());
      const unsigned char* p = data + blob_start + off;
      for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid header fields at offset 8: ") + e.what());
  }
  if (bytes.size() - blob_start != blob_bytes) {
    throw FormatError("header/blob size mismatch: header declares " + std::to_string(blob_bytes) +
                      " blob bytes starting at offset " + std::to_string(blob_start) + ", file has " +
                      std::to_string(bytes.size() - blob_start));
  }
  return Model::from_tensors(config, std::move(tensors));
}

}  // namespace langsteer
