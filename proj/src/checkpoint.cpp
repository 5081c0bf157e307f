#include "xattn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xattn/rng.hpp"

namespace xattn {

namespace {

constexpr char kMagic[4] = {'X', 'A', 'T', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_bytes(std::vector<uint8_t>& out, const void* data, size_t n) {
  const auto* p = static_cast<const uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

void put_floats(std::vector<uint8_t>& out, const std::vector<float>& v) {
  // x86 is little-endian; payload is defined as little-endian f32
  put_bytes(out, v.data(), v.size() * sizeof(float));
}

struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) {
      throw std::runtime_error("checkpoint truncated: needed " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos) + ", file has " +
                               std::to_string(buf.size()));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<float> floats(size_t n) {
    need(n * sizeof(float));
    std::vector<float> v(n);
    std::memcpy(v.data(), buf.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    return v;
  }
};

void put_tensor_table(std::vector<uint8_t>& out,
                      const std::vector<std::pair<std::string, std::vector<float>>>& table,
                      const std::vector<Shape>& shapes) {
  put_u32(out, static_cast<uint32_t>(table.size()));
  for (size_t i = 0; i < table.size(); ++i) {
    put_string(out, table[i].first);
    put_u32(out, static_cast<uint32_t>(shapes[i].size()));
    for (int d : shapes[i]) put_u32(out, static_cast<uint32_t>(d));
    put_floats(out, table[i].second);
  }
}

}  // namespace

std::vector<uint8_t> checkpoint_to_bytes(const ModelParams& params, int64_t step,
                                         const AdamState* opt_state) {
  std::vector<uint8_t> out;
  put_bytes(out, kMagic, 4);
  put_u32(out, kVersion);
  nlohmann::json config_json{{"model", params.config}};
  put_string(out, config_json.dump());
  put_u64(out, static_cast<uint64_t>(step));
  out.push_back(opt_state ? 1 : 0);

  std::vector<std::pair<std::string, std::vector<float>>> table;
  std::vector<Shape> shapes;
  for (const auto& [name, t] : params.named) {
    table.emplace_back(name, t.data);
    shapes.push_back(t.shape);
  }
  put_tensor_table(out, table, shapes);

  if (opt_state) {
    put_u64(out, static_cast<uint64_t>(opt_state->step));
    std::vector<std::pair<std::string, std::vector<float>>> mt, vt;
    std::vector<Shape> mshapes;
    for (size_t i = 0; i < params.named.size(); ++i) {
      mt.emplace_back("adam.m." + params.named[i].first, opt_state->m[i]);
      vt.emplace_back("adam.v." + params.named[i].first, opt_state->v[i]);
      mshapes.push_back(params.named[i].second.shape);
    }
    put_tensor_table(out, mt, mshapes);
    put_tensor_table(out, vt, mshapes);
  }
  return out;
}

Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    std::string found(reinterpret_cast<const char*>(bytes.data()), 4);
    throw std::runtime_error("bad checkpoint magic: found \"" + found + "\" expected \"XATN\"");
  }
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("bad checkpoint version: found " + std::to_string(version) +
                             " expected " + std::to_string(kVersion));
  }
  const std::string config_str = r.str();
  ModelConfig config = nlohmann::json::parse(config_str).at("model").get<ModelConfig>();
  Checkpoint ck;
  ck.step = static_cast<int64_t>(r.u64());
  const bool has_opt = r.u8() != 0;

  const auto expected = param_shapes(config);
  const uint32_t n_tensors = r.u32();
  if (n_tensors != expected.size()) {
    throw std::runtime_error("checkpoint tensor count " + std::to_string(n_tensors) +
                             " does not match config (" + std::to_string(expected.size()) + ")");
  }
  ck.params.config = config;
  for (const auto& [name, shape] : expected) {
    const std::string got_name = r.str();
    if (got_name != name) {
      throw std::runtime_error("checkpoint tensor \"" + got_name + "\" where \"" + name +
                               "\" was expected");
    }
    const uint32_t ndim = r.u32();
    Shape got_shape(ndim);
    for (auto& d : got_shape) d = static_cast<int>(r.u32());
    if (got_shape != shape) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(got_shape) + ", config expects " + shape_str(shape));
    }
    auto data = r.floats(static_cast<size_t>(shape_numel(shape)));
    Tensor t(shape, std::move(data), /*rg=*/true);
    ck.params.named.emplace_back(name, std::move(t));
  }

  if (has_opt) {
    AdamState state;
    state.step = static_cast<int64_t>(r.u64());
    for (const char* prefix : {"adam.m.", "adam.v."}) {
      const uint32_t n = r.u32();
      if (n != expected.size()) {
        throw std::runtime_error("checkpoint optimizer table size mismatch");
      }
      auto& dst = prefix[5] == 'm' ? state.m : state.v;
      for (const auto& [name, shape] : expected) {
        const std::string got_name = r.str();
        if (got_name != std::string(prefix) + name) {
          throw std::runtime_error("unexpected optimizer tensor \"" + got_name + "\"");
        }
        const uint32_t ndim = r.u32();
        Shape got_shape(ndim);
        for (auto& d : got_shape) d = static_cast<int>(r.u32());
        if (got_shape != shape) {
          throw std::runtime_error("optimizer tensor " + got_name + " shape mismatch");
        }
        dst.push_back(r.floats(static_cast<size_t>(shape_numel(shape))));
      }
    }
    ck.opt_state = std::move(state);
  }
  if (r.pos != bytes.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                             " trailing bytes");
  }
  return ck;
}

void save_checkpoint(const ModelParams& params, int64_t step,
                     const AdamState* opt_state, const std::string& path) {
  const auto bytes = checkpoint_to_bytes(params, step, opt_state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

void check_config(const ModelParams& params, const ModelConfig& expected) {
  if (params.config == expected) return;
  nlohmann::json got{{"model", params.config}};
  nlohmann::json want{{"model", expected}};
  throw std::runtime_error("checkpoint config " + got.dump() +
                           " does not match expected " + want.dump());
}

std::string checkpoint_id(const ModelParams& params, int64_t step) {
  const auto bytes = checkpoint_to_bytes(params, step, nullptr);
  const uint64_t h = fnv1a64(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace xattn
