#include "cal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cal/text.hpp"

namespace cal {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrc::truncated, std::string("file ends inside ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> dst, const char* what) {
    need(dst.size() * 4, what);
    std::memcpy(dst.data(), bytes_.data() + pos_, dst.size() * 4);
    pos_ += dst.size() * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CheckpointError(CheckpointErrc::malformed, "header line without '=': " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::string to_string(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::io: return "io-error";
    case CheckpointErrc::magic_mismatch: return "magic-mismatch";
    case CheckpointErrc::version_mismatch: return "version-mismatch";
    case CheckpointErrc::truncated: return "truncated";
    case CheckpointErrc::malformed: return "malformed";
    case CheckpointErrc::shape_mismatch: return "shape-mismatch";
  }
  return "unknown";
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint make_checkpoint(const EncoderParams& params, const AdamW* optimizer,
                           std::map<std::string, std::string> meta) {
  Checkpoint ckpt;
  ckpt.config = params.config();
  ckpt.meta = std::move(meta);
  for (const auto& [name, t] : params.named()) ckpt.tensors.emplace_back(name, t.detach());
  if (optimizer != nullptr) {
    const auto& ps = optimizer->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ckpt.tensors.emplace_back("adamw.m/" + ps[i].first,
                                Tensor::from_data(ps[i].second.shape(), optimizer->first_moment(i)));
      ckpt.tensors.emplace_back("adamw.v/" + ps[i].first,
                                Tensor::from_data(ps[i].second.shape(), optimizer->second_moment(i)));
    }
    ckpt.meta["adamw.step"] = std::to_string(optimizer->step_count());
  }
  return ckpt;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string header;
  for (const auto& [k, v] : ckpt.config.to_map()) header += "encoder." + k + "=" + v + "\n";
  for (const auto& [k, v] : ckpt.meta) header += "meta." + k + "=" + v + "\n";

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, ckpt.format_version);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(float));
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointErrc::io, "cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError(CheckpointErrc::io, "write failed for " + path.string());
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kCheckpointMagic) {
    throw CheckpointError(CheckpointErrc::truncated, "file shorter than the magic");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError(CheckpointErrc::magic_mismatch, "not a CALCKPT1 file");
  }
  r.str(sizeof kCheckpointMagic, "magic");
  Checkpoint ckpt;
  ckpt.format_version = r.u32("version");
  if (ckpt.format_version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::version_mismatch,
                          "format version " + std::to_string(ckpt.format_version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = r.u32("header length");
  auto header = parse_header(r.str(header_len, "header"));
  std::map<std::string, std::string> encoder_kv;
  for (const auto& [k, v] : header) {
    if (k.rfind("encoder.", 0) == 0) encoder_kv[k.substr(8)] = v;
    else if (k.rfind("meta.", 0) == 0) ckpt.meta[k.substr(5)] = v;
  }
  try {
    ckpt.config = EncoderConfig::from_map(encoder_kv);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrc::malformed, std::string("encoder config: ") + e.what());
  }
  const auto count = r.u32("tensor count");
  std::vector<std::pair<std::string, Shape>> directory;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("tensor directory");
    auto name = r.str(name_len, "tensor name");
    const auto rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw CheckpointError(CheckpointErrc::malformed, "tensor " + name + " has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.u32("tensor dims");
      if (dim == 0) throw CheckpointError(CheckpointErrc::malformed, "tensor " + name + " has a zero dimension");
      shape.push_back(dim);
    }
    directory.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : directory) {
    Tensor t = Tensor::zeros(shape);
    r.floats(t.data(), "tensor payload");
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  if (!r.done()) throw CheckpointError(CheckpointErrc::malformed, "trailing bytes after payload");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

void restore_params(const Checkpoint& ckpt, EncoderParams& params) {
  for (auto& [name, dst] : params.named()) {
    const Tensor* src = ckpt.find(name);
    if (src == nullptr) throw CheckpointError(CheckpointErrc::shape_mismatch, "tensor " + name + " missing from checkpoint");
    if (src->shape() != dst.shape()) {
      throw CheckpointError(CheckpointErrc::shape_mismatch, "tensor " + name + " has shape " +
                                                                shape_str(src->shape()) + ", model expects " +
                                                                shape_str(dst.shape()));
    }
  }
  for (auto& [name, dst] : params.named()) {
    Tensor handle = dst;
    auto s = ckpt.find(name)->data();
    std::copy(s.begin(), s.end(), handle.data().begin());
  }
  params.bump_version();
}

EncoderParams params_from_checkpoint(const Checkpoint& ckpt) {
  EncoderParams params = EncoderParams::init(ckpt.config, 0);
  restore_params(ckpt, params);
  return params;
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer) {
  const auto& ps = optimizer.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Tensor* m = ckpt.find("adamw.m/" + ps[i].first);
    const Tensor* v = ckpt.find("adamw.v/" + ps[i].first);
    if (m == nullptr || v == nullptr || m->numel() != ps[i].second.numel() || v->numel() != ps[i].second.numel()) {
      throw CheckpointError(CheckpointErrc::shape_mismatch, "optimizer state for " + ps[i].first);
    }
    optimizer.first_moment(i).assign(m->data().begin(), m->data().end());
    optimizer.second_moment(i).assign(v->data().begin(), v->data().end());
  }
  auto it = ckpt.meta.find("adamw.step");
  optimizer.set_step_count(it == ckpt.meta.end() ? 0 : std::stoull(it->second));
}

}  // namespace cal
