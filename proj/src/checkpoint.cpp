#include "gina/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace gina {

namespace {

constexpr char kMagic[4] = {'G', 'I', 'N', 'A'};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kInt32: return 4;
    case torch::kUInt8: return 5;
    case torch::kBool: return 6;
    default: throw std::invalid_argument("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kInt32;
    case 5: return torch::kUInt8;
    case 6: return torch::kBool;
    default: throw std::runtime_error("checkpoint: unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& t) {
  tensors[name] = t.detach().cpu().contiguous().clone();
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::runtime_error("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) put(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) put(prefix + b.key(), b.value());
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const auto& src = get(prefix + name);
    if (src.sizes() != dst.sizes()) {
      std::ostringstream msg;
      msg << "checkpoint tensor '" << prefix << name << "' has shape " << src.sizes()
          << ", model expects " << dst.sizes();
      throw std::runtime_error(msg.str());
    }
    dst.copy_(src);
  };
  for (auto& p : module.named_parameters(true)) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_into(b.key(), b.value());
}

void Checkpoint::put_adam(const std::string& prefix, torch::optim::Adam& optimizer) {
  auto& state = optimizer.state();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = prefix + std::to_string(index++);
      auto it = state.find(p.unsafeGetTensorImpl());
      if (it == state.end()) continue;
      auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
      put(key + ".step", torch::tensor(s.step(), torch::kInt64));
      put(key + ".exp_avg", s.exp_avg());
      put(key + ".exp_avg_sq", s.exp_avg_sq());
    }
  }
}

void Checkpoint::load_adam(const std::string& prefix, torch::optim::Adam& optimizer) const {
  auto& state = optimizer.state();
  state.clear();
  std::size_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = prefix + std::to_string(index++);
      if (!has(key + ".step")) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->step(get(key + ".step").item<std::int64_t>());
      s->exp_avg(get(key + ".exp_avg").clone().to(p.dtype()));
      s->exp_avg_sq(get(key + ".exp_avg_sq").clone().to(p.dtype()));
      state[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

void Checkpoint::set_config(const PipelineConfig& config) { header["config"] = config; }

PipelineConfig Checkpoint::config() const {
  if (!header.contains("config")) throw std::runtime_error("checkpoint has no config");
  PipelineConfig c;
  from_json(header.at("config"), c);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_pod(out, kCheckpointVersion);
  const auto header = ckpt.header.dump();
  write_pod(out, static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_pod(out, static_cast<std::uint64_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, dtype_code(t.scalar_type()));
    write_pod(out, static_cast<std::uint8_t>(t.dim()));
    for (auto d : t.sizes()) write_pod(out, static_cast<std::int64_t>(d));
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    write_pod(out, nbytes);
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("not a GINA checkpoint: " + path.string());
  }
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint format version " + std::to_string(version) +
                             " does not match reader version " +
                             std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto header_len = read_pod<std::uint64_t>(in, "header length");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint truncated while reading header");
  ckpt.header = nlohmann::json::parse(header);
  const auto count = read_pod<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, "tensor name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint truncated while reading tensor name");
    const auto dtype = dtype_from_code(read_pod<std::uint8_t>(in, name));
    const auto ndim = read_pod<std::uint8_t>(in, name);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = read_pod<std::int64_t>(in, name);
    const auto nbytes = read_pod<std::uint64_t>(in, name);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has inconsistent size");
    }
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("checkpoint truncated inside tensor '" + name + "'");
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

void check_config_compatible(const PipelineConfig& stored, const PipelineConfig& expected) {
  const auto fields = shape_mismatches(stored, expected);
  if (fields.empty()) return;
  const nlohmann::json js = stored;
  const nlohmann::json je = expected;
  std::string msg = "checkpoint config mismatch:";
  for (const auto& f : fields) {
    msg += " " + f + " (checkpoint " + js.at(f).dump() + ", expected " + je.at(f).dump() + ")";
  }
  throw std::runtime_error(msg);
}

}  // namespace gina
