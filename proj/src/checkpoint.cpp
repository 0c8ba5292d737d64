#include "lcye/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lcye {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'C', 'Y', 'E', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const std::string& path) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("truncated checkpoint " + path);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

struct Slot {
  std::string name;
  std::vector<int> shape;
  Tensor* tensor;
};

std::vector<Slot> slots(const NamedLists& lists) {
  std::vector<Slot> out;
  for (const auto& [ns, list] : lists) {
    for (const auto& p : list.params) {
      Tensor& t = p.var->mutable_value();
      out.push_back({ns + "/" + p.name, t.shape(), &t});
    }
    for (const auto& b : list.buffers) out.push_back({ns + "/" + b.name, b.tensor->shape(), b.tensor});
  }
  return out;
}

json header_json(const CheckpointHeader& h) {
  json arrays = json::array();
  for (const auto& a : h.arrays) arrays.push_back({{"name", a.name}, {"shape", a.shape}});
  return {{"format_version", h.format_version}, {"component", h.component}, {"namespaces", h.namespaces},
          {"meta", h.meta},                     {"config_hash", h.config_hash}, {"arrays", arrays}};
}

CheckpointHeader read_header(std::istream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path + " is not an lcye checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  }
  const auto len = get_le<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated checkpoint " + path);
  json j = json::parse(text);
  CheckpointHeader h;
  h.format_version = version;
  h.component = j.at("component").get<std::string>();
  h.namespaces = j.at("namespaces").get<std::vector<std::string>>();
  h.meta = j.at("meta");
  h.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& a : j.at("arrays")) h.arrays.push_back({a.at("name"), a.at("shape").get<std::vector<int>>()});
  return h;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path);
  return in;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& component, const NamedLists& lists,
                     const json& meta, const std::string& config_hash) {
  CheckpointHeader h;
  h.component = component;
  for (const auto& l : lists) h.namespaces.push_back(l.first);
  h.meta = meta;
  h.config_hash = config_hash;
  const auto ss = slots(lists);
  for (const auto& s : ss) h.arrays.push_back({s.name, s.shape});
  const std::string text = header_json(h).dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& s : ss) {
    for (double v : s.tensor->values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  auto in = open_in(path);
  return read_header(in, path);
}

CheckpointHeader load_checkpoint(const std::string& path, const std::string& component, const NamedLists& lists) {
  auto in = open_in(path);
  CheckpointHeader h = read_header(in, path);
  if (h.component != component) {
    throw std::runtime_error(path + " holds a " + h.component + " checkpoint, expected " + component);
  }
  const auto ss = slots(lists);
  if (ss.size() != h.arrays.size()) {
    throw std::runtime_error(path + ": " + std::to_string(h.arrays.size()) + " arrays, model has " +
                             std::to_string(ss.size()));
  }
  for (std::size_t i = 0; i < ss.size(); ++i) {
    if (ss[i].name != h.arrays[i].name || ss[i].shape != h.arrays[i].shape) {
      throw std::runtime_error(path + ": array " + h.arrays[i].name + " does not match model array " + ss[i].name);
    }
  }
  for (const auto& s : ss) {
    for (auto& v : s.tensor->values()) v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, path)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path + ": trailing bytes after payload");
  return h;
}

}  // namespace lcye
