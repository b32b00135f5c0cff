#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include "gali/model.hpp"

namespace gali {

namespace {

constexpr std::string_view kFormat = "gali-weights";
constexpr int kVersion = 1;

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error("load_weights: header is missing '" + key + "'");
  std::size_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error("load_weights: bad value for '" + key + "': " + s);
  }
  return v;
}

double parse_real(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error("load_weights: header is missing '" + key + "'");
  double v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error("load_weights: bad value for '" + key + "': " + s);
  }
  return v;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_weights(const std::filesystem::path& path, const Model& model) {
  const auto& spec = model.spec();
  std::ostringstream header;
  header << "format: " << kFormat << "\n"
         << "version: " << kVersion << "\n"
         << "vocab: " << spec.vocab << "\n"
         << "layers: " << spec.layers << "\n"
         << "heads: " << spec.heads << "\n"
         << "head_dim: " << spec.head_dim << "\n"
         << "hidden: " << spec.hidden << "\n"
         << "mlp_hidden: " << spec.mlp_hidden << "\n"
         << "rope_base: " << fmt_double(spec.rope_base) << "\n"
         << "norm_eps: " << fmt_double(spec.norm_eps) << "\n";
  for (const auto& t : tensor_manifest(spec)) {
    header << "tensor: " << t.name << " " << t.rows << " " << t.cols << "\n";
  }
  header << "end\n";

  std::string payload;
  Weights copy = model.weights();
  for (const Matrix* m : tensor_slots(copy)) {
    for (double v : m->data()) put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  const std::uint64_t sum = fnv1a64(
      {reinterpret_cast<const unsigned char*>(payload.data()), payload.size()});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("save_weights: cannot open " + path.string());
  os << header.str();
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  for (int b = 0; b < 8; ++b) os.put(static_cast<char>((sum >> (8 * b)) & 0xFF));
  if (!os) throw Error("save_weights: write failed for " + path.string());
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_weights: cannot open " + path.string());

  std::map<std::string, std::string> kv;
  std::vector<TensorShape> listed;
  std::string line;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw Error("load_weights: malformed header line: " + line);
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "tensor") {
      std::istringstream ts(value);
      TensorShape t;
      if (!(ts >> t.name >> t.rows >> t.cols)) throw Error("load_weights: bad tensor line: " + line);
      listed.push_back(t);
    } else {
      kv[key] = value;
    }
  }
  if (!ended) throw Error("load_weights: header not terminated by 'end'");
  if (kv["format"] != kFormat) throw Error("load_weights: not a gali-weights file");
  if (parse_count(kv, "version") != kVersion) throw Error("load_weights: unsupported version");

  ModelSpec spec;
  spec.vocab = parse_count(kv, "vocab");
  spec.layers = parse_count(kv, "layers");
  spec.heads = parse_count(kv, "heads");
  spec.head_dim = parse_count(kv, "head_dim");
  spec.hidden = parse_count(kv, "hidden");
  spec.mlp_hidden = parse_count(kv, "mlp_hidden");
  spec.rope_base = parse_real(kv, "rope_base");
  spec.norm_eps = parse_real(kv, "norm_eps");
  spec.validate();

  const auto expected = tensor_manifest(spec);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (i >= listed.size() || listed[i].name != expected[i].name) {
      throw Error("load_weights: missing tensor " + expected[i].name);
    }
    if (listed[i].rows != expected[i].rows || listed[i].cols != expected[i].cols) {
      throw Error("load_weights: tensor " + expected[i].name + " has shape " +
                  std::to_string(listed[i].rows) + "x" + std::to_string(listed[i].cols) +
                  ", expected " + std::to_string(expected[i].rows) + "x" +
                  std::to_string(expected[i].cols));
    }
  }
  if (listed.size() != expected.size()) {
    throw Error("load_weights: unexpected tensor " + listed[expected.size()].name);
  }

  const std::vector<unsigned char> rest((std::istreambuf_iterator<char>(is)),
                                        std::istreambuf_iterator<char>());
  std::size_t floats = 0;
  for (const auto& t : expected) floats += t.rows * t.cols;
  const std::size_t payload_bytes = floats * 4;
  if (rest.size() != payload_bytes + 8) {
    throw Error("load_weights: checksum failure, payload is " + std::to_string(rest.size()) +
                " bytes, expected " + std::to_string(payload_bytes + 8) + " (truncated or padded)");
  }
  std::uint64_t stored = 0;
  for (int b = 7; b >= 0; --b) stored = (stored << 8) | rest[payload_bytes + b];
  if (fnv1a64({rest.data(), payload_bytes}) != stored) {
    throw Error("load_weights: checksum failure, payload does not match stored checksum");
  }

  Weights w;
  w.layers.resize(spec.layers);
  const auto slots = tensor_slots(w);
  const unsigned char* p = rest.data();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    Matrix m(expected[i].rows, expected[i].cols);
    for (double& v : m.data()) {
      v = static_cast<double>(std::bit_cast<float>(get_u32(p)));
      p += 4;
    }
    *slots[i] = std::move(m);
  }
  return Model(spec, std::move(w));
}

std::vector<TokenId> read_tokens(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_tokens: cannot open " + path.string());
  std::vector<TokenId> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    TokenId v = 0;
    const auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc{} || res.ptr != line.data() + line.size()) {
      throw Error("read_tokens: line " + std::to_string(lineno) + " is not an unsigned integer");
    }
    out.push_back(v);
  }
  return out;
}

void write_tokens(const std::filesystem::path& path, std::span<const TokenId> tokens) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("write_tokens: cannot open " + path.string());
  for (TokenId t : tokens) os << t << "\n";
}

}  // namespace gali
