#include "liparch/weightfile.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <unordered_map>

#include "liparch/errors.hpp"

namespace liparch {

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'I', 'P', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t tensor_bytes(const Matrix& m) {
  return static_cast<std::uint64_t>(m.rows) * static_cast<std::uint64_t>(m.cols) * 8;
}

template <typename T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& raw, std::size_t at) {
  T value;
  std::memcpy(&value, raw.data() + at, sizeof(T));
  return value;
}

int require_dim(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_number_integer())
    throw ValidationError(where + ": dims need integer '" + key + "'");
  const int v = j.at(key).get<int>();
  if (v < 1) throw ValidationError(where + ": dims must be positive");
  return v;
}

// Tensors referenced by a descriptor, resolved by role.
class RoleTable {
 public:
  RoleTable(const json& params, const WeightModel& model, std::string where)
      : where_(std::move(where)) {
    for (std::size_t i = 0; i < model.tensors.size(); ++i)
      by_name_.emplace(model.tensors[i].first, &model.tensors[i].second);
    if (params.is_null()) return;
    if (!params.is_object()) throw ValidationError(where_ + ": params must be an object");
    for (const auto& [role, name] : params.items()) {
      if (!name.is_string())
        throw ValidationError(where_ + ": role '" + role + "' must name a tensor");
      roles_.emplace(role, name.get<std::string>());
    }
  }

  const Matrix& get(const std::string& role) {
    const auto r = roles_.find(role);
    if (r == roles_.end()) throw ValidationError(where_ + ": missing role '" + role + "'");
    used_.push_back(role);
    const auto t = by_name_.find(r->second);
    if (t == by_name_.end())
      throw ValidationError(where_ + ": role '" + role + "' references unknown tensor '" +
                            r->second + "'");
    return *t->second;
  }

  void finish() const {
    for (const auto& [role, name] : roles_)
      if (std::find(used_.begin(), used_.end(), role) == used_.end())
        throw ValidationError(where_ + ": unexpected role '" + role + "'");
  }

 private:
  std::string where_;
  std::unordered_map<std::string, const Matrix*> by_name_;
  std::unordered_map<std::string, std::string> roles_;
  std::vector<std::string> used_;
};

double opt_number(const json& options, const char* key, double fallback,
                  const std::string& where) {
  if (!options.contains(key)) return fallback;
  if (!options.at(key).is_number())
    throw ValidationError(where + ": option '" + key + "' must be a number");
  return options.at(key).get<double>();
}

Activation opt_activation(const json& options, const std::string& where) {
  if (!options.contains("activation")) return Activation::relu;
  if (!options.at("activation").is_string())
    throw ValidationError(where + ": option 'activation' must be a string");
  return activation_from_string(options.at("activation").get<std::string>());
}

Block build_one(const json& desc, const WeightModel& model, const std::string& where) {
  reject_unknown_keys(desc, {"kind", "dims", "params", "options"}, where);
  if (!desc.contains("kind") || !desc.at("kind").is_string())
    throw ValidationError(where + ": needs a string 'kind'");
  if (!desc.contains("dims") || !desc.at("dims").is_object())
    throw ValidationError(where + ": needs a 'dims' object");
  reject_unknown_keys(desc.at("dims"), {"s", "n"}, where + ".dims");
  const Dims dims{require_dim(desc.at("dims"), "s", where),
                  require_dim(desc.at("dims"), "n", where)};
  const std::string kind = desc.at("kind").get<std::string>();
  const json options = desc.value("options", json::object());
  if (!options.is_object()) throw ValidationError(where + ": options must be an object");
  RoleTable roles(desc.value("params", json::object()), model, where);

  Block out = Block::identity(dims);
  if (kind == "identity") {
    reject_unknown_keys(options, {}, where + ".options");
  } else if (kind == "linear") {
    reject_unknown_keys(options, {}, where + ".options");
    out = Block::linear(dims, roles.get("w"));
  } else if (kind == "mlp2") {
    reject_unknown_keys(options, {"activation"}, where + ".options");
    out = Block::mlp2(dims, roles.get("w1"), roles.get("w2"), opt_activation(options, where));
  } else if (kind == "layer_norm") {
    reject_unknown_keys(options, {"epsilon"}, where + ".options");
    out = Block::layer_norm(dims, roles.get("gamma"), roles.get("beta"),
                            opt_number(options, "epsilon", 1e-5, where));
  } else if (kind == "self_attention") {
    reject_unknown_keys(options, {}, where + ".options");
    out = Block::self_attention(dims, roles.get("wq"), roles.get("wk"), roles.get("wv"));
  } else if (kind == "multi_head_self_attention") {
    reject_unknown_keys(options, {"heads", "d_k"}, where + ".options");
    if (!options.contains("heads") || !options.at("heads").is_number_integer())
      throw ValidationError(where + ": option 'heads' is required");
    const int heads = options.at("heads").get<int>();
    if (heads < 1) throw ValidationError(where + ": option 'heads' must be >= 1");
    std::vector<AttentionHead> hs;
    for (int h = 0; h < heads; ++h) {
      const std::string suffix = std::to_string(h);
      hs.push_back(AttentionHead{roles.get("wq" + suffix), roles.get("wk" + suffix),
                                 roles.get("wv" + suffix)});
    }
    if (options.contains("d_k") &&
        options.at("d_k").get<int>() != hs.front().wq.cols)
      throw ValidationError(where + ": option 'd_k' disagrees with the head tensors");
    out = Block::multi_head_self_attention(dims, std::move(hs), roles.get("wo"));
  } else if (kind == "pre_ln_transformer" || kind == "post_ln_transformer") {
    reject_unknown_keys(options, {"epsilon", "alpha", "activation"}, where + ".options");
    const double epsilon = opt_number(options, "epsilon", 1e-5, where);
    const double alpha = opt_number(options, "alpha", 1.0, where);
    Block ln1 = Block::layer_norm(dims, roles.get("ln1.gamma"), roles.get("ln1.beta"), epsilon);
    Block ln2 = Block::layer_norm(dims, roles.get("ln2.gamma"), roles.get("ln2.beta"), epsilon);
    Block mlp = Block::mlp2(dims, roles.get("mlp.w1"), roles.get("mlp.w2"),
                            opt_activation(options, where));
    Block attn = Block::self_attention(dims, roles.get("attn.wq"), roles.get("attn.wk"),
                                       roles.get("attn.wv"));
    out = kind == "pre_ln_transformer"
              ? Block::pre_ln_transformer(std::move(ln1), std::move(mlp), std::move(ln2),
                                          std::move(attn), alpha)
              : Block::post_ln_transformer(std::move(attn), std::move(ln1), std::move(mlp),
                                           std::move(ln2), alpha);
  } else {
    throw ValidationError(where + ": unsupported kind '" + kind + "'");
  }
  roles.finish();
  return out;
}

}  // namespace

WeightModel load_weights(const std::string& path) {
  const std::string raw = read_text_file(path);
  if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 4) != 0)
    throw ValidationError("weightfile: " + path + " is not a LIPW file");
  if (read_le<std::uint32_t>(raw, 4) != kFormatVersion)
    throw ValidationError("weightfile: unsupported format version");
  const std::uint64_t mlen = read_le<std::uint64_t>(raw, 8);
  if (16 + mlen > raw.size())
    throw ValidationError("weightfile: manifest length exceeds the file");
  const json manifest = parse_json_text(raw.substr(16, mlen), path);
  const std::size_t payload_start = (16 + mlen + 7) / 8 * 8;
  if (payload_start > raw.size())
    throw ValidationError("weightfile: truncated between manifest and payload");
  const std::size_t payload_size = raw.size() - payload_start;

  reject_unknown_keys(manifest, {"version", "tensors", "blocks"}, "manifest");
  if (manifest.value("version", 0) != 1)
    throw ValidationError("weightfile: manifest version must be 1");
  if (!manifest.contains("tensors") || !manifest.at("tensors").is_array() ||
      !manifest.contains("blocks") || !manifest.at("blocks").is_array())
    throw ValidationError("weightfile: manifest needs 'tensors' and 'blocks' arrays");

  WeightModel model;
  model.blocks = manifest.at("blocks");
  std::uint64_t expected_offset = 0;
  for (const json& t : manifest.at("tensors")) {
    reject_unknown_keys(t, {"name", "shape", "offset_bytes", "dtype"}, "tensor");
    if (!t.contains("name") || !t.at("name").is_string() || t.at("name").empty())
      throw ValidationError("weightfile: tensor entries need a name");
    const std::string name = t.at("name").get<std::string>();
    for (const auto& [existing, _] : model.tensors)
      if (existing == name)
        throw ValidationError("weightfile: duplicate tensor '" + name + "'");
    if (t.value("dtype", "") != "f64le")
      throw ValidationError("weightfile: tensor '" + name + "' has an unsupported dtype");
    if (!t.contains("shape") || !t.at("shape").is_array() || t.at("shape").size() != 2)
      throw ValidationError("weightfile: tensor '" + name + "' needs shape [rows, cols]");
    const int rows = t.at("shape").at(0).get<int>();
    const int cols = t.at("shape").at(1).get<int>();
    if (rows < 1 || cols < 1)
      throw ValidationError("weightfile: tensor '" + name + "' has a non-positive shape");
    const std::uint64_t offset = t.value("offset_bytes", std::uint64_t{0});
    if (offset % 8 != 0)
      throw ValidationError("weightfile: tensor '" + name + "' offset is not 8-byte aligned");
    if (offset != expected_offset)
      throw ValidationError("weightfile: tensor '" + name +
                            "' overlaps or leaves a gap; offsets must be dense and in order");
    const std::uint64_t extent =
        static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8;
    if (offset + extent > payload_size)
      throw ValidationError("weightfile: tensor '" + name + "' extends past the payload");
    Matrix m(rows, cols);
    std::memcpy(m.data.data(), raw.data() + payload_start + offset,
                static_cast<std::size_t>(extent));
    model.tensors.emplace_back(name, std::move(m));
    expected_offset = offset + extent;
  }
  if (expected_offset != payload_size)
    throw ValidationError("weightfile: payload has bytes not covered by any tensor");
  return model;
}

void save_weights(const std::string& path, const WeightModel& model) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : model.tensors) {
    if (name.empty()) throw ValidationError("save_weights: tensor names must be nonempty");
    if (m.rows < 1 || m.cols < 1)
      throw ValidationError("save_weights: tensor '" + name + "' is empty");
    json t;
    t["name"] = name;
    t["shape"] = {m.rows, m.cols};
    t["offset_bytes"] = offset;
    t["dtype"] = "f64le";
    tensors.push_back(std::move(t));
    offset += tensor_bytes(m);
  }
  if (!model.blocks.is_array())
    throw ValidationError("save_weights: blocks must be an array");
  json manifest;
  manifest["version"] = 1;
  manifest["tensors"] = std::move(tensors);
  manifest["blocks"] = model.blocks;
  const std::string mtext = manifest.dump();

  std::string out;
  out.reserve(16 + mtext.size() + 8 + static_cast<std::size_t>(offset));
  out.append(kMagic, 4);
  append_le(out, kFormatVersion);
  append_le(out, static_cast<std::uint64_t>(mtext.size()));
  out += mtext;
  out.append((8 - out.size() % 8) % 8, '\0');
  for (const auto& [name, m] : model.tensors)
    out.append(reinterpret_cast<const char*>(m.data.data()),
               static_cast<std::size_t>(tensor_bytes(m)));
  write_text_atomic(path, out);
}

std::vector<Block> build_blocks(const WeightModel& model) {
  std::vector<Block> out;
  std::size_t i = 0;
  for (const json& desc : model.blocks)
    out.push_back(build_one(desc, model, "block[" + std::to_string(i++) + "]"));
  return out;
}

namespace {

json dims_json(Dims d) {
  json j;
  j["s"] = d.s;
  j["n"] = d.n;
  return j;
}

struct Exporter {
  WeightModel model;
  std::string prefix;
  json params = json::object();

  void tensor(const std::string& role, const Matrix& m) {
    const std::string name = prefix + "." + role;
    model.tensors.emplace_back(name, m);
    params[role] = name;
  }
};

}  // namespace

WeightModel model_from_blocks(const std::vector<Block>& blocks) {
  Exporter ex;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    ex.prefix = "b" + std::to_string(i);
    ex.params = json::object();
    json desc;
    desc["kind"] = to_string(b.kind());
    desc["dims"] = dims_json(b.dims());
    json options = json::object();
    switch (b.kind()) {
      case BlockKind::linear:
        ex.tensor("w", b.linear_weight());
        break;
      case BlockKind::mlp2:
        ex.tensor("w1", b.mlp_w1());
        ex.tensor("w2", b.mlp_w2());
        options["activation"] = to_string(b.mlp_activation());
        break;
      case BlockKind::layer_norm:
        ex.tensor("gamma", b.ln_gamma());
        ex.tensor("beta", b.ln_beta());
        options["epsilon"] = b.ln_epsilon();
        break;
      case BlockKind::self_attention:
        ex.tensor("wq", b.attn_wq());
        ex.tensor("wk", b.attn_wk());
        ex.tensor("wv", b.attn_wv());
        break;
      case BlockKind::multi_head_self_attention: {
        const auto& heads = b.msa_heads();
        for (std::size_t h = 0; h < heads.size(); ++h) {
          const std::string suffix = std::to_string(h);
          ex.tensor("wq" + suffix, heads[h].wq);
          ex.tensor("wk" + suffix, heads[h].wk);
          ex.tensor("wv" + suffix, heads[h].wv);
        }
        ex.tensor("wo", b.msa_wo());
        options["heads"] = static_cast<int>(heads.size());
        options["d_k"] = heads.front().wq.cols;
        break;
      }
      case BlockKind::pre_ln_transformer:
      case BlockKind::post_ln_transformer: {
        const bool pre = b.kind() == BlockKind::pre_ln_transformer;
        const auto& c = b.children();
        const Block& ln1 = pre ? c[0] : c[1];
        const Block& mlp = pre ? c[1] : c[2];
        const Block& ln2 = pre ? c[2] : c[3];
        const Block& attn = pre ? c[3] : c[0];
        if (mlp.kind() != BlockKind::mlp2 || attn.kind() != BlockKind::self_attention)
          throw ValidationError("model_from_blocks: block " + std::to_string(i) +
                                " has composite branches the format cannot carry");
        if (ln1.ln_epsilon() != ln2.ln_epsilon())
          throw ValidationError("model_from_blocks: block " + std::to_string(i) +
                                " has mismatched layer-norm epsilons");
        ex.tensor("ln1.gamma", ln1.ln_gamma());
        ex.tensor("ln1.beta", ln1.ln_beta());
        ex.tensor("ln2.gamma", ln2.ln_gamma());
        ex.tensor("ln2.beta", ln2.ln_beta());
        ex.tensor("mlp.w1", mlp.mlp_w1());
        ex.tensor("mlp.w2", mlp.mlp_w2());
        ex.tensor("attn.wq", attn.attn_wq());
        ex.tensor("attn.wk", attn.attn_wk());
        ex.tensor("attn.wv", attn.attn_wv());
        options["epsilon"] = ln1.ln_epsilon();
        options["alpha"] = b.alpha();
        options["activation"] = to_string(mlp.mlp_activation());
        break;
      }
      default:
        throw ValidationError(std::string("model_from_blocks: cannot export kind '") +
                              to_string(b.kind()) + "'");
    }
    desc["params"] = ex.params;
    desc["options"] = options;
    ex.model.blocks.push_back(std::move(desc));
  }
  return std::move(ex.model);
}

json validate_weights(const std::string& path) {
  const WeightModel model = load_weights(path);
  const std::vector<Block> blocks = build_blocks(model);
  std::uint64_t payload = 0;
  for (const auto& [name, m] : model.tensors) payload += tensor_bytes(m);
  json report;
  report["valid"] = true;
  report["tensors"] = model.tensors.size();
  report["blocks"] = blocks.size();
  report["payload_bytes"] = payload;
  json kinds = json::array();
  for (const Block& b : blocks) kinds.push_back(b.describe());
  report["kinds"] = std::move(kinds);
  return report;
}

}  // namespace liparch
