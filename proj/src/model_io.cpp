#include "ddrnn/model_io.hpp"

#include <map>
#include <sstream>

#include "ddrnn/errors.hpp"
#include "ddrnn/run_config.hpp"
#include "ddrnn/tensor_io.hpp"

namespace ddrnn {

namespace {

std::string file_name(const std::string& tensor) { return tensor + ".ddrt"; }

template <class T>
std::vector<std::uint32_t> shape_of(const T& t) {
  if constexpr (T::ColsAtCompileTime == 1) {
    return {static_cast<std::uint32_t>(t.size())};
  } else {
    return {static_cast<std::uint32_t>(t.rows()), static_cast<std::uint32_t>(t.cols())};
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

void save_model(const std::filesystem::path& dir, const ModelConfig& config, const ModelParams<float>& params) {
  check_params(config, params);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "model.cfg", format_model_config(config));
  std::string manifest;
  for_each_tensor(params, [&](const std::string& name, const auto& t, ParamGroup) {
    save_tensor(dir / file_name(name), Tensor::from_f32({t.data(), static_cast<std::size_t>(t.size())}, shape_of(t)));
    manifest += name + " " + file_name(name) + "\n";
  });
  write_text(dir / "manifest.txt", manifest);
}

StoredModel load_model(const std::filesystem::path& dir) {
  StoredModel m;
  try {
    m.config = parse_model_config(read_text(dir / "model.cfg"));
  } catch (const ConfigError& e) {
    throw FormatError("model.cfg: " + std::string(e.what()));
  }
  std::map<std::string, std::string> files;
  std::istringstream manifest(read_text(dir / "manifest.txt"));
  for (std::string line; std::getline(manifest, line);) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, file, extra;
    if (!(fields >> name >> file) || (fields >> extra) || !files.emplace(name, file).second) {
      throw FormatError("malformed model manifest line: " + line);
    }
  }
  m.params = ModelParams<float>::zeros(m.config);
  for_each_tensor(m.params, [&](const std::string& name, auto& t, ParamGroup) {
    const auto it = files.find(name);
    if (it == files.end()) throw FormatError("model manifest lacks " + name);
    const Tensor stored = load_tensor(dir / it->second);
    if (stored.dims != shape_of(t)) throw ShapeError("stored tensor " + name + " does not match model.cfg");
    const std::vector<float> values = stored.to_f32();
    std::copy(values.begin(), values.end(), t.data());
  });
  return m;
}

}  // namespace ddrnn
