#include "ltr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ltr/config.hpp"
#include "ltr/rng.hpp"
#include "ltr/synthdata.hpp"

namespace ltr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_str(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, std::uint32_t(s.size()));
  out.append(s);
}

class Cursor {
 public:
  Cursor(std::string_view data, std::string source) : d_(data), src_(std::move(source)) {}

  template <typename U>
  U take(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, d_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string str(const char* what) { return std::string(bytes(take<std::uint32_t>(what), what)); }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& msg) const { throw CheckpointError(src_ + ": " + msg); }

 private:
  void need(std::size_t n, const char* what) const {
    if (d_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }

  std::string_view d_;
  std::string src_;
  std::size_t pos_ = 0;
};

std::string record_bytes(const TensorRecord& r) {
  std::string out;
  put_str(out, r.name);
  put<std::uint32_t>(out, std::uint32_t(r.shape.size()));
  for (std::size_t d : r.shape) put<std::uint32_t>(out, std::uint32_t(d));
  put<std::uint8_t>(out, r.dtype);
  out += r.bytes;
  return out;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 15];
  return s;
}

std::uint64_t checksum(std::string_view body) {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

}  // namespace

template <typename T>
void Checkpoint::add(std::string name, const Tensor<T>& t) {
  if (find(name)) throw CheckpointError("duplicate record '" + name + "'");
  TensorRecord r;
  r.name = std::move(name);
  r.shape = t.shape();
  r.dtype = std::is_same_v<T, float> ? 0 : 1;
  const auto d = t.data();
  r.bytes.assign(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T));
  records.push_back(std::move(r));
}

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

template <typename T>
Tensor<T> Checkpoint::get(std::string_view name) const {
  const TensorRecord* r = find(name);
  if (!r) throw CheckpointError("missing record '" + std::string(name) + "'");
  Tensor<T> t(r->shape);
  auto dst = t.mutable_data();
  if (r->dtype == 0) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      float v;
      std::memcpy(&v, r->bytes.data() + i * sizeof(float), sizeof(float));
      dst[i] = T(v);
    }
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v;
      std::memcpy(&v, r->bytes.data() + i * sizeof(double), sizeof(double));
      dst[i] = T(v);
    }
  }
  return t;
}

std::string Checkpoint::serialize() const {
  std::string body;
  nlohmann::json sums = nlohmann::json::object();
  for (const auto& r : records) {
    const std::string b = record_bytes(r);
    sums[r.name] = hex64(checksum(b));
    body += b;
  }
  nlohmann::json cfg = config;
  cfg["record_checksums"] = sums;
  std::string out = "LTRC";
  put<std::uint32_t>(out, version);
  put_str(out, cfg.dump());
  put_str(out, vocabulary);
  put<std::uint64_t>(out, rng_key);
  put<std::uint64_t>(out, rng_counter);
  out += body;
  put<std::uint64_t>(out, checksum(body));
  return out;
}

Checkpoint Checkpoint::parse(std::string_view data, const std::string& source) {
  Cursor c(data, source);
  if (c.bytes(4, "magic") != "LTRC") c.fail("not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.version = c.take<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    c.fail("format version " + std::to_string(ck.version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  try {
    ck.config = nlohmann::json::parse(c.str("config"));
  } catch (const nlohmann::json::parse_error&) {
    c.fail("config blob is not valid JSON");
  }
  if (!ck.config.is_object()) c.fail("config blob is not an object");
  nlohmann::json sums = ck.config.value("record_checksums", nlohmann::json::object());
  ck.config.erase("record_checksums");
  ck.vocabulary = c.str("vocabulary");
  ck.rng_key = c.take<std::uint64_t>("rng key");
  ck.rng_counter = c.take<std::uint64_t>("rng counter");

  if (data.size() < c.pos() + 8) c.fail("truncated before checksum");
  const std::size_t body_begin = c.pos();
  const std::size_t body_end = data.size() - 8;
  const std::string_view body = data.substr(body_begin, body_end - body_begin);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body_end, 8);
  const bool body_ok = checksum(body) == stored;

  Cursor rc(body, source);
  std::set<std::string> names;
  std::string bad_record;
  while (rc.pos() < body.size()) {
    const std::size_t start = rc.pos();
    TensorRecord r;
    r.name = rc.str("record name");
    const auto rank = rc.take<std::uint32_t>("record rank");
    if (rank > 8) rc.fail("record '" + r.name + "' has implausible rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(rc.take<std::uint32_t>("record dims"));
      n *= r.shape.back();
    }
    r.dtype = rc.take<std::uint8_t>("record dtype");
    if (r.dtype > 1) rc.fail("record '" + r.name + "' has unknown dtype " + std::to_string(r.dtype));
    r.bytes = std::string(rc.bytes(n * (r.dtype == 0 ? 4 : 8), "record values"));
    if (!names.insert(r.name).second) rc.fail("record '" + r.name + "' appears twice");
    const auto it = sums.find(r.name);
    if (bad_record.empty() &&
        (it == sums.end() || *it != hex64(checksum(body.substr(start, rc.pos() - start))))) {
      bad_record = r.name;
    }
    ck.records.push_back(std::move(r));
  }
  if (!body_ok || !bad_record.empty()) {
    c.fail("checksum mismatch" +
           (bad_record.empty() ? std::string() : " in record '" + bad_record + "'"));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::string bytes = serialize();
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

template <typename T>
void put_model(Checkpoint& ck, const ModelParams<T>& p) {
  ck.config["model"] = to_json(p.config());
  ck.vocabulary = Vocabulary::standard().symbols();
  for (const auto& q : p.params()) ck.add(q.name, q.value);
}

template <typename T>
ModelParams<T> get_model(const Checkpoint& ck) {
  if (ck.vocabulary != Vocabulary::standard().symbols()) {
    throw CheckpointError("checkpoint vocabulary differs from this build's vocabulary");
  }
  if (!ck.config.contains("model")) throw CheckpointError("checkpoint has no model config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(ck.config.at("model"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  auto p = ModelParams<T>::init(cfg, Rng(0));
  std::size_t matched = 0;
  for (const auto& r : ck.records) {
    if (r.name.rfind("opt.", 0) == 0) continue;
    Parameter<T>* q = p.find(r.name);
    if (!q) throw CheckpointError("unknown parameter record '" + r.name + "'");
    if (r.shape != q->value.shape()) {
      throw CheckpointError("parameter record '" + r.name + "' has the wrong shape");
    }
    q->value = ck.get<T>(r.name);
    ++matched;
  }
  if (matched != p.params().size()) {
    for (const auto& q : p.params()) {
      if (!ck.find(q.name)) throw CheckpointError("missing parameter record '" + q.name + "'");
    }
  }
  return p;
}

template void Checkpoint::add(std::string, const Tensor<float>&);
template void Checkpoint::add(std::string, const Tensor<double>&);
template Tensor<float> Checkpoint::get(std::string_view) const;
template Tensor<double> Checkpoint::get(std::string_view) const;
template void put_model(Checkpoint&, const ModelParams<float>&);
template void put_model(Checkpoint&, const ModelParams<double>&);
template ModelParams<float> get_model(const Checkpoint&);
template ModelParams<double> get_model(const Checkpoint&);

}  // namespace ltr
