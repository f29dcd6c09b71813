// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "freqmoe/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace freqmoe {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw RuntimeError("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw RuntimeError("sha256: update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw RuntimeError("sha256: final failed");
    static const char* hexc = "0123456789abcdef";
    std::string out(static_cast<std::size_t>(len) * 2, '0');
    for (unsigned int i = 0; i < len; ++i) {
      out[2 * i] = hexc[digest[i] >> 4];
      out[2 * i + 1] = hexc[digest[i] & 0xf];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

void append_raw(std::string& buf, const void* data, std::size_t n) {
  buf.append(static_cast<const char*>(data), n);
}

void append_u32(std::string& buf, std::uint32_t v) { append_raw(buf, &v, 4); }
void append_u64(std::string& buf, std::uint64_t v) { append_raw(buf, &v, 8); }

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("rename failed for " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Cursor over a loaded file with hard bounds checks.
struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw DataError(std::string("truncated file while reading ") + what);
  }
  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
};

void check_magic_version(Reader& r, const char* magic, const std::string& path) {
  if (r.take(4, "magic") != magic)
    throw DataError("bad magic in " + path + " (expected " + magic + ")");
  const std::uint32_t ver = r.u32("version");
  if (ver != kFormatVersion)
    throw DataError("unsupported format version " + std::to_string(ver) + " in " + path +
                    " (this build reads version " + std::to_string(kFormatVersion) + ")");
}

nlohmann::json config_to_json(const FnoConfig& c) {
  return {{"grid", c.grid},     {"in_channels", c.in_channels},
          {"out_channels", c.out_channels}, {"width", c.width},
          {"layers", c.layers}, {"modes1", c.modes1},
          {"modes2", c.modes2}};
}

FnoConfig config_from_json(const nlohmann::json& j) {
  FnoConfig c;
  c.grid = j.at("grid").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.width = j.at("width").get<int>();
  c.layers = j.at("layers").get<int>();
  c.modes1 = j.at("modes1").get<int>();
  c.modes2 = j.at("modes2").get<int>();
  return c;
}

nlohmann::json manifest_for(std::vector<TensorRecord>& records) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (auto& rec : records) {
    Sha256 h;
    std::uint64_t bytes = 0;
    for (auto& piece : rec.pieces) {
      h.update(piece.first, static_cast<std::size_t>(piece.second) * sizeof(double));
      bytes += static_cast<std::uint64_t>(piece.second) * sizeof(double);
    }
    manifest.push_back({{"name", rec.name},
                        {"dtype", rec.dtype},
                        {"shape", rec.shape},
                        {"offset", offset},
                        {"bytes", bytes},
                        {"sha256", h.hex()}});
    offset += bytes;
  }
  return manifest;
}

void save_checkpoint_impl(const std::string& path, nlohmann::json header,
                          std::vector<TensorRecord> records) {
  header["manifest"] = manifest_for(records);
  const std::string hdr = header.dump();
  std::string out;
  out.reserve(hdr.size() + 64);
  append_raw(out, "FQMO", 4);
  append_u32(out, kFormatVersion);
  append_u64(out, hdr.size());
  out += hdr;
  for (auto& rec : records)
    for (auto& piece : rec.pieces)
      append_raw(out, piece.first, static_cast<std::size_t>(piece.second) * sizeof(double));
  atomic_write(path, out);
}

void load_payload(Reader& r, std::vector<TensorRecord>& records, const nlohmann::json& manifest,
                  const std::string& path) {
  if (!manifest.is_array() || manifest.size() != records.size())
    throw DataError("manifest entry count does not match architecture in " + path);
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& entry = manifest[i];
    auto& rec = records[i];
    if (entry.at("name").get<std::string>() != rec.name ||
        entry.at("dtype").get<std::string>() != rec.dtype ||
        entry.at("shape").get<std::vector<long long>>() != rec.shape)
      throw DataError("manifest entry " + std::to_string(i) + " (" + rec.name +
                      ") does not match architecture in " + path);
    const std::uint64_t bytes = entry.at("bytes").get<std::uint64_t>();
    if (entry.at("offset").get<std::uint64_t>() != offset ||
        bytes != static_cast<std::uint64_t>(rec.doubles()) * sizeof(double))
      throw DataError("manifest offsets disagree with payload layout in " + path);
    Sha256 h;
    for (auto& piece : rec.pieces) {
      const std::size_t n = static_cast<std::size_t>(piece.second) * sizeof(double);
      const std::string raw = r.take(n, rec.name.c_str());
      std::memcpy(piece.first, raw.data(), n);
      h.update(raw.data(), n);
    }
    if (h.hex() != entry.at("sha256").get<std::string>())
      throw DataError("integrity failure: checksum mismatch in tensor " + rec.name + " of " +
                      path);
    offset += bytes;
  }
  if (r.pos != r.buf.size()) throw DataError("trailing bytes after payload in " + path);
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t bytes) {
  Sha256 h;
  h.update(data, bytes);
  return h.hex();
}

std::string sha256_file_hex(const std::string& path) {
  const std::string bytes = read_file(path);
  return sha256_hex(bytes.data(), bytes.size());
}

void save_dense_checkpoint(const std::string& path, const DenseFno& model,
                           const nlohmann::json& provenance, std::uint64_t seed) {
  nlohmann::json header;
  header["kind"] = "dense";
  header["config"] = config_to_json(model.config);
  header["seed"] = seed;
  header["provenance"] = provenance;
  // tensor_records only reads through the returned pointers here
  save_checkpoint_impl(path, header, tensor_records(const_cast<DenseFno&>(model)));
}

void save_moe_checkpoint(const std::string& path, const FreqMoe& model,
                         const nlohmann::json& provenance, std::uint64_t seed) {
  nlohmann::json header;
  header["kind"] = "freqmoe";
  header["config"] = config_to_json(model.config);
  header["layout"] = {{"chunk1", model.layout.chunk1},
                      {"chunk2", model.layout.chunk2},
                      {"bands1", model.layout.bands1},
                      {"bands2", model.layout.bands2}};
  header["expert_bands"] = model.expert_bands;
  header["rank"] = model.rank;
  header["alpha"] = model.alpha;
  header["top_k"] = model.top_k;
  header["tau"] = model.layers.empty() ? 1.0 : model.layers[0].gates.tau;
  header["seed"] = seed;
  header["provenance"] = provenance;
  save_checkpoint_impl(path, header, tensor_records(const_cast<FreqMoe&>(model)));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes};
  check_magic_version(r, "FQMO", path);
  const std::uint64_t hlen = r.u64("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(static_cast<std::size_t>(hlen), "header"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  Checkpoint ck;
  try {
    ck.kind = header.at("kind").get<std::string>();
    ck.seed = header.value("seed", std::uint64_t{0});
    ck.provenance = header.value("provenance", nlohmann::json::object());
    const FnoConfig cfg = config_from_json(header.at("config"));
    if (ck.kind == "dense") {
      DenseFno m = alloc_dense_fno(cfg);
      auto records = tensor_records(m);
      load_payload(r, records, header.at("manifest"), path);
      ck.dense = std::move(m);
    } else if (ck.kind == "freqmoe") {
      FreqMoe m;
      m.config = cfg;
      m.layout.chunk1 = header.at("layout").at("chunk1").get<int>();
      m.layout.chunk2 = header.at("layout").at("chunk2").get<int>();
      m.layout.bands1 = header.at("layout").at("bands1").get<int>();
      m.layout.bands2 = header.at("layout").at("bands2").get<int>();
      m.expert_bands = header.at("expert_bands").get<std::vector<int>>();
      m.rank = header.at("rank").get<int>();
      m.alpha = header.at("alpha").get<double>();
      m.top_k = header.at("top_k").get<int>();
      const double tau = header.at("tau").get<double>();
      const int h = cfg.width;
      const int p12 = m.layout.chunk1 * m.layout.chunk2;
      m.lift.W.resize(h, cfg.in_channels);
      m.lift.b.resize(h);
      m.proj.W.resize(cfg.out_channels, h);
      m.proj.b.resize(cfg.out_channels);
      m.layers.resize(static_cast<std::size_t>(cfg.layers));
      for (auto& layer : m.layers) {
        layer.base = make_spectral(h, m.layout.chunk1, m.layout.chunk2);
        layer.pointwise.W.resize(h, h);
        layer.pointwise.b.resize(h);
        layer.gates.tau = tau;
        layer.gates.w = Eigen::MatrixXd::Zero(m.num_experts(), h);
        layer.experts.resize(static_cast<std::size_t>(m.num_experts()));
        for (auto& ex : layer.experts)
          for (int blk = 0; blk < 2; ++blk) {
            ex.A[static_cast<std::size_t>(blk)] = Eigen::MatrixXcd::Zero(m.rank, h);
            ex.B[static_cast<std::size_t>(blk)].assign(static_cast<std::size_t>(p12),
                                                       Eigen::MatrixXcd::Zero(h, m.rank));
          }
      }
      auto records = tensor_records(m);
      load_payload(r, records, header.at("manifest"), path);
      m.validate();
      ck.moe = std::move(m);
    } else {
      throw DataError("unknown architecture kind '" + ck.kind + "' in " + path);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  return ck;
}

DenseFno load_dense_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "dense")
    throw ConfigError("expected a dense checkpoint but " + path + " has architecture kind '" +
                      ck.kind + "'");
  return std::move(ck.dense);
}

FreqMoe load_moe_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "freqmoe")
    throw ConfigError("expected a freqmoe checkpoint but " + path + " has architecture kind '" +
                      ck.kind + "'");
  return std::move(ck.moe);
}

namespace {

// Disk sample order: row-major (channel, row, col), row = axis 0.
void append_field(std::string& buf, const Field& f) {
  for (int c = 0; c < f.channels(); ++c)
    for (int i0 = 0; i0 < f.grid; ++i0)
      for (int i1 = 0; i1 < f.grid; ++i1) {
        const double v = f.at(c, i0, i1);
        append_raw(buf, &v, sizeof(double));
      }
}

void read_field(Reader& r, Field& f) {
  for (int c = 0; c < f.channels(); ++c)
    for (int i0 = 0; i0 < f.grid; ++i0)
      for (int i1 = 0; i1 < f.grid; ++i1) {
        r.need(sizeof(double), "sample data");
        double v;
        std::memcpy(&v, r.buf.data() + r.pos, sizeof(double));
        r.pos += sizeof(double);
        f.at(c, i0, i1) = v;
      }
}

std::string dataset_payload(const Dataset& ds) {
  std::string payload;
  const std::size_t per =
      static_cast<std::size_t>(ds.meta.channels) * ds.meta.grid * ds.meta.grid * sizeof(double);
  payload.reserve(per * (ds.inputs.size() + ds.targets.size()));
  for (const auto& f : ds.inputs) append_field(payload, f);
  for (const auto& f : ds.targets) append_field(payload, f);
  return payload;
}

nlohmann::json meta_to_json(const PdeDatasetMeta& m) {
  return {{"problem", m.problem},   {"grid", m.grid},       {"channels", m.channels},
          {"nu", m.nu},             {"dt", m.dt},           {"samples", m.samples},
          {"traj_len", m.traj_len}, {"seed", m.seed},       {"v_bar", m.v_bar},
          {"burn_in", m.burn_in},   {"substeps", m.substeps}};
}

PdeDatasetMeta meta_from_json(const nlohmann::json& j) {
  PdeDatasetMeta m;
  m.problem = j.at("problem").get<std::string>();
  m.grid = j.at("grid").get<int>();
  m.channels = j.at("channels").get<int>();
  m.nu = j.at("nu").get<double>();
  m.dt = j.at("dt").get<double>();
  m.samples = j.at("samples").get<int>();
  m.traj_len = j.at("traj_len").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.v_bar = j.at("v_bar").get<double>();
  m.burn_in = j.at("burn_in").get<int>();
  m.substeps = j.at("substeps").get<int>();
  return m;
}

}  // namespace

std::string dataset_sha256(const Dataset& ds) {
  const std::string payload = dataset_payload(ds);
  return sha256_hex(payload.data(), payload.size());
}

void save_dataset(const std::string& path, const Dataset& ds) {
  if (static_cast<int>(ds.inputs.size()) != ds.meta.samples ||
      ds.targets.size() != ds.inputs.size())
    throw ConfigError("save_dataset: sample count does not match meta");
  const std::string payload = dataset_payload(ds);
  nlohmann::json meta = meta_to_json(ds.meta);
  meta["sha256"] = sha256_hex(payload.data(), payload.size());
  const std::string mjson = meta.dump();
  std::string out;
  out.reserve(mjson.size() + payload.size() + 32);
  append_raw(out, "FQDS", 4);
  append_u32(out, kFormatVersion);
  append_u64(out, mjson.size());
  out += mjson;
  out += payload;
  atomic_write(path, out);
}

Dataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes};
  check_magic_version(r, "FQDS", path);
  const std::uint64_t mlen = r.u64("meta length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.take(static_cast<std::size_t>(mlen), "meta"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset meta in " + path + ": " + e.what());
  }
  Dataset ds;
  std::string expected_sha;
  try {
    ds.meta = meta_from_json(meta);
    expected_sha = meta.at("sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt dataset meta in " + path + ": " + e.what());
  }
  ds.meta.validate();
  const std::size_t payload_pos = r.pos;
  const std::size_t per =
      static_cast<std::size_t>(ds.meta.channels) * ds.meta.grid * ds.meta.grid * sizeof(double);
  const std::size_t expect = per * 2 * static_cast<std::size_t>(ds.meta.samples);
  if (bytes.size() - payload_pos != expect)
    throw DataError("dataset payload length mismatch in " + path);
  if (sha256_hex(bytes.data() + payload_pos, expect) != expected_sha)
    throw DataError("integrity failure: dataset checksum mismatch in " + path);
  ds.inputs.reserve(static_cast<std::size_t>(ds.meta.samples));
  ds.targets.reserve(static_cast<std::size_t>(ds.meta.samples));
  for (int i = 0; i < ds.meta.samples; ++i) {
    Field f(ds.meta.channels, ds.meta.grid);
    read_field(r, f);
    ds.inputs.push_back(std::move(f));
  }
  for (int i = 0; i < ds.meta.samples; ++i) {
    Field f(ds.meta.channels, ds.meta.grid);
    read_field(r, f);
    ds.targets.push_back(std::move(f));
  }
  return ds;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  atomic_write(path, content);
}

}  // namespace freqmoe
