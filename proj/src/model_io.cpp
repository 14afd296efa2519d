#include <cstring>
#include <fstream>
#include <stdexcept>

#include "facegen/generator.hpp"
#include "facegen/pose_lora.hpp"

// Checkpoint layout (all little-endian):
//   "V2FP" | u32 version=1
//   config: u32 embed_dim, tokens, channels, encoder_blocks, expansion_hidden,
//           image_h, image_w, image_ch, n_decoder_channels, dec channels...
//           f64 mask {min,max,mean,std} | u64 init_seed
//   u32 array_count | per array: u16 name_len, name, u8 rank, u64 dims[rank]
//   payload: float64 arrays in table order
// Optional adapter section appended after the payload:
//   "LORA" | u32 rank | f64 alpha | u64 adapter_seed | u64 encoder_seed
//   u32 array_count | table | payload (adapter factors then encoder stages)

namespace facegen {

namespace {

constexpr char kModelMagic[4] = {'V', '2', 'F', 'P'};
constexpr char kLoraTag[4] = {'L', 'O', 'R', 'A'};
constexpr std::uint32_t kModelVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("model checkpoint: truncated file");
  return v;
}

void write_table_and_payload(std::ostream& os,
                             const std::vector<std::pair<std::string, Array>>& params) {
  put(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, arr] : params) {
    put(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(os, static_cast<std::uint8_t>(arr.shape.size()));
    for (auto d : arr.shape) put(os, static_cast<std::uint64_t>(d));
  }
  for (const auto& [name, arr] : params) {
    os.write(reinterpret_cast<const char*>(arr.v.data()),
             static_cast<std::streamsize>(arr.v.size() * sizeof(double)));
  }
}

void read_table_and_payload(std::istream& is, std::vector<std::pair<std::string, Array>>& params,
                            const char* what) {
  const auto n = get<std::uint32_t>(is);
  if (n != params.size()) {
    throw std::runtime_error(std::string(what) + ": checkpoint has " + std::to_string(n) +
                             " arrays, expected " + std::to_string(params.size()));
  }
  for (auto& [name, arr] : params) {
    const auto len = get<std::uint16_t>(is);
    std::string stored(len, '\0');
    is.read(stored.data(), len);
    if (!is || stored != name) {
      throw std::runtime_error(std::string(what) + ": array order mismatch at '" + name + "'");
    }
    const auto rank = get<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    if (shape != arr.shape) {
      throw std::runtime_error(std::string(what) + ": shape mismatch for '" + name + "'");
    }
  }
  for (auto& [name, arr] : params) {
    is.read(reinterpret_cast<char*>(arr.v.data()),
            static_cast<std::streamsize>(arr.v.size() * sizeof(double)));
    if (!is) throw std::runtime_error(std::string(what) + ": payload truncated at '" + name + "'");
  }
}

GeneratorConfig read_config(std::istream& is) {
  GeneratorConfig cfg;
  cfg.embed_dim = get<std::uint32_t>(is);
  cfg.tokens = get<std::uint32_t>(is);
  cfg.channels = get<std::uint32_t>(is);
  cfg.encoder_blocks = get<std::uint32_t>(is);
  cfg.expansion_hidden = get<std::uint32_t>(is);
  cfg.image_h = get<std::uint32_t>(is);
  cfg.image_w = get<std::uint32_t>(is);
  cfg.image_ch = get<std::uint32_t>(is);
  const auto ndec = get<std::uint32_t>(is);
  cfg.decoder_channels.resize(ndec);
  for (auto& d : cfg.decoder_channels) d = get<std::uint32_t>(is);
  cfg.mask.min = get<double>(is);
  cfg.mask.max = get<double>(is);
  cfg.mask.mean = get<double>(is);
  cfg.mask.std = get<double>(is);
  cfg.init_seed = get<std::uint64_t>(is);
  return cfg;
}

void write_config(std::ostream& os, const GeneratorConfig& cfg) {
  put(os, static_cast<std::uint32_t>(cfg.embed_dim));
  put(os, static_cast<std::uint32_t>(cfg.tokens));
  put(os, static_cast<std::uint32_t>(cfg.channels));
  put(os, static_cast<std::uint32_t>(cfg.encoder_blocks));
  put(os, static_cast<std::uint32_t>(cfg.expansion_hidden));
  put(os, static_cast<std::uint32_t>(cfg.image_h));
  put(os, static_cast<std::uint32_t>(cfg.image_w));
  put(os, static_cast<std::uint32_t>(cfg.image_ch));
  put(os, static_cast<std::uint32_t>(cfg.decoder_channels.size()));
  for (auto d : cfg.decoder_channels) put(os, static_cast<std::uint32_t>(d));
  put(os, cfg.mask.min);
  put(os, cfg.mask.max);
  put(os, cfg.mask.mean);
  put(os, cfg.mask.std);
  put(os, cfg.init_seed);
}

// Reads the base-model part and leaves the stream at the adapter section (or
// EOF).
GeneratorModel read_model(std::istream& is, const std::string& what) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw std::runtime_error(what + ": bad model magic");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kModelVersion) {
    throw std::runtime_error(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  const GeneratorConfig cfg = read_config(is);
  GeneratorModel model = GeneratorModel::init(cfg);
  read_table_and_payload(is, model.mutable_params(), what.c_str());
  return model;
}

}  // namespace

void GeneratorModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kModelMagic, 4);
  put(os, kModelVersion);
  write_config(os, cfg_);
  write_table_and_payload(os, params_);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

GeneratorModel GeneratorModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_model(is, path.string());
}

void save_adapter(const std::filesystem::path& model_path, const LoraAdapter& adapter,
                  const ConditionEncoder& encoder) {
  std::uintmax_t base_size = 0;
  {
    // Parse past the base model to find where any previous adapter section
    // starts, then truncate it away before appending the new one.
    std::ifstream is(model_path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + model_path.string());
    (void)read_model(is, model_path.string());
    base_size = static_cast<std::uintmax_t>(is.tellg());
  }
  std::filesystem::resize_file(model_path, base_size);
  std::ofstream os(model_path, std::ios::binary | std::ios::app);
  if (!os) throw std::runtime_error("cannot append to " + model_path.string());
  os.write(kLoraTag, 4);
  put(os, static_cast<std::uint32_t>(adapter.config().rank));
  put(os, adapter.config().alpha);
  put(os, adapter.config().init_seed);
  put(os, static_cast<std::uint64_t>(0));  // reserved (encoder seed lives in its arrays)
  std::vector<std::pair<std::string, Array>> all = adapter.params();
  for (const auto& p : encoder.params()) all.push_back(p);
  write_table_and_payload(os, all);
  if (!os) throw std::runtime_error("write failed for " + model_path.string());
}

std::pair<LoraAdapter, ConditionEncoder> load_adapter(const std::filesystem::path& model_path,
                                                      const GeneratorModel& base) {
  std::ifstream is(model_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + model_path.string());
  (void)read_model(is, model_path.string());
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, kLoraTag, 4) != 0) {
    throw std::runtime_error(model_path.string() + ": no adapter section");
  }
  LoraConfig cfg;
  cfg.rank = get<std::uint32_t>(is);
  cfg.alpha = get<double>(is);
  cfg.init_seed = get<std::uint64_t>(is);
  (void)get<std::uint64_t>(is);  // reserved
  LoraAdapter adapter = LoraAdapter::init(base, cfg);
  ConditionEncoder encoder(base.config().image_h, base.config().image_w, base.config().channels,
                           cfg.init_seed);
  std::vector<std::pair<std::string, Array>> all = adapter.params();
  for (const auto& p : encoder.params()) all.push_back(p);
  read_table_and_payload(is, all, model_path.string().c_str());
  std::size_t i = 0;
  for (auto& [name, arr] : adapter.mutable_params()) arr = all[i++].second;
  for (auto& [name, arr] : encoder.mutable_params()) arr = all[i++].second;
  return {std::move(adapter), std::move(encoder)};
}

}  // namespace facegen
