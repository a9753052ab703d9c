#include "goodpoint/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace goodpoint {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<char*>(&v), 8); }
void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, std::uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string get_str(std::istream& in) {
  const std::uint32_t len = get_u32(in);
  if (len > (1u << 20)) raise_runtime("checkpoint string too long (corrupt file?)");
  std::string s(len, '\0');
  in.read(s.data(), std::streamsize(len));
  return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise_runtime("cannot write checkpoint: " + path);
  out.write("GPCK", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(ckpt.flags.size()));
  for (const auto& [k, v] : ckpt.flags) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u64(out, ckpt.step);
  put_u32(out, std::uint32_t(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(out, name);
    out.put(char(0));  // dtype f32
    put_u32(out, std::uint32_t(t.dims.size()));
    for (std::uint64_t d : t.dims) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(float)));
  }
  if (!out) raise_runtime("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise_runtime("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (std::memcmp(magic, "GPCK", 4) != 0) raise_runtime("not a checkpoint file: " + path);
  const std::uint32_t version = get_u32(in);
  if (version > kCheckpointVersion)
    raise_runtime("checkpoint version " + std::to_string(version) + " is newer than supported " +
                  std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  const std::uint32_t nflags = get_u32(in);
  for (std::uint32_t i = 0; i < nflags; ++i) {
    std::string k = get_str(in);
    ckpt.flags[k] = get_str(in);
  }
  ckpt.step = get_u64(in);
  const std::uint32_t ntensors = get_u32(in);
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    const std::string name = get_str(in);
    const int dtype = in.get();
    if (dtype != 0) raise_runtime("unsupported tensor dtype in " + path);
    Checkpoint::Tensor t;
    const std::uint32_t ndim = get_u32(in);
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(get_u64(in));
      count *= t.dims.back();
    }
    if (count > (1ull << 32)) raise_runtime("tensor too large in " + path);
    t.data.resize(count);
    in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(count * sizeof(float)));
    ckpt.tensors[name] = std::move(t);
  }
  if (!in) raise_runtime("truncated checkpoint: " + path);
  return ckpt;
}

void add_tensor(Checkpoint& ckpt, const std::string& name, const Mat<float>& m) {
  Checkpoint::Tensor t;
  t.dims = {std::uint64_t(m.rows()), std::uint64_t(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  ckpt.tensors[name] = std::move(t);
}

void add_tensor(Checkpoint& ckpt, const std::string& name, const Vec<float>& v) {
  Checkpoint::Tensor t;
  t.dims = {std::uint64_t(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  ckpt.tensors[name] = std::move(t);
}

namespace {

std::string shape_to_string(const NetworkShape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.backbone_channels.size(); ++i)
    os << (i ? "," : "") << s.backbone_channels[i];
  os << ";pools=";
  for (std::size_t i = 0; i < s.pool_after.size(); ++i) os << (i ? "," : "") << s.pool_after[i];
  os << ";hidden=" << s.head_hidden << ";desc=" << s.descriptor_dim;
  return os.str();
}

NetworkShape shape_from_string(const std::string& str) {
  NetworkShape s;
  auto parse_ints = [](const std::string& part) {
    std::vector<int> out;
    std::istringstream is(part);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
  };
  std::istringstream is(str);
  std::string part;
  int field = 0;
  while (std::getline(is, part, ';')) {
    if (field == 0) {
      s.backbone_channels = parse_ints(part);
    } else if (part.rfind("pools=", 0) == 0) {
      s.pool_after = parse_ints(part.substr(6));
    } else if (part.rfind("hidden=", 0) == 0) {
      s.head_hidden = std::stoi(part.substr(7));
    } else if (part.rfind("desc=", 0) == 0) {
      s.descriptor_dim = std::stoi(part.substr(5));
    }
    ++field;
  }
  return s;
}

}  // namespace

Checkpoint to_checkpoint(const Network<float>& net, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.flags["format"] = "goodpoint-network";
  ckpt.flags["channel_order"] = kChannelOrderTag;
  ckpt.flags["shape"] = shape_to_string(net.shape);
  for (const auto& [name, layer] : layer_refs(net)) {
    add_tensor(ckpt, name + ".weight", layer->weight);
    add_tensor(ckpt, name + ".bias", layer->bias);
  }
  return ckpt;
}

Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
  const auto it = ckpt.flags.find("shape");
  if (it == ckpt.flags.end()) raise_runtime("checkpoint lacks a network shape tag");
  const auto order = ckpt.flags.find("channel_order");
  if (order != ckpt.flags.end() && order->second != kChannelOrderTag)
    raise_runtime("checkpoint channel order '" + order->second + "' not supported");
  Network<float> net = make_network<float>(shape_from_string(it->second), 0);
  for (auto& [name, layer] : layer_refs(net)) {
    const auto wt = ckpt.tensors.find(name + ".weight");
    const auto bt = ckpt.tensors.find(name + ".bias");
    if (wt == ckpt.tensors.end() || bt == ckpt.tensors.end())
      raise_runtime("checkpoint missing tensors for layer " + name);
    if (wt->second.dims.size() != 2 || Eigen::Index(wt->second.dims[0]) != layer->weight.rows() ||
        Eigen::Index(wt->second.dims[1]) != layer->weight.cols())
      raise_runtime("checkpoint tensor " + name + ".weight has unexpected shape");
    if (bt->second.dims.size() != 1 || Eigen::Index(bt->second.dims[0]) != layer->bias.size())
      raise_runtime("checkpoint tensor " + name + ".bias has unexpected shape");
    std::memcpy(layer->weight.data(), wt->second.data.data(),
                wt->second.data.size() * sizeof(float));
    std::memcpy(layer->bias.data(), bt->second.data.data(), bt->second.data.size() * sizeof(float));
  }
  return net;
}

std::string describe_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "checkpoint version " << kCheckpointVersion << ", step " << ckpt.step << "\n";
  for (const auto& [k, v] : ckpt.flags) os << "  " << k << " = " << v << "\n";
  std::uint64_t total = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    os << "  " << name << " [";
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < t.dims.size(); ++i) {
      os << (i ? "x" : "") << t.dims[i];
      count *= t.dims[i];
    }
    os << "] (" << count << ")\n";
    if (name.rfind("opt.", 0) != 0) total += count;
  }
  os << "  parameters: " << total << "\n";
  return os.str();
}

}  // namespace goodpoint
