#include "whiten/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace whiten {

namespace {

constexpr const char* kHeader = "whitekit-checkpoint v1";

void write_doubles_le(std::ostream& out, const double* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p),
              static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &p[i], 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>(bits >> (8 * b));
      out.write(buf, 8);
    }
  }
}

void read_doubles_le(std::istream& in, double* p, std::size_t n,
                     const std::string& path) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(p),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw DataError("checkpoint: truncated payload in " + path);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char buf[8];
      if (!in.read(reinterpret_cast<char*>(buf), 8)) {
        throw DataError("checkpoint: truncated payload in " + path);
      }
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(buf[b]) << (8 * b);
      std::memcpy(&p[i], &bits, 8);
    }
  }
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out << kHeader << '\n';
  for (const auto& [key, value] : ck.meta) {
    out << "meta " << key << ' ' << value << '\n';
  }
  std::size_t total = 0;
  for (const auto& t : ck.tensors) {
    out << "tensor " << t.name << ' ';
    for (std::size_t d = 0; d < t.shape.size(); ++d) {
      out << (d ? "x" : "") << t.shape[d];
    }
    out << ' ' << total << '\n';
    total += t.data.size();
  }
  out << "data " << total << '\n';
  for (const auto& t : ck.tensors) {
    write_doubles_le(out, t.data.data(), t.data.size());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw DataError("checkpoint: bad header in " + path);
  }
  Checkpoint ck;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta.emplace_back(key, value);
    } else if (kind == "tensor") {
      NamedTensor t;
      std::string dims;
      std::size_t offset;
      ls >> t.name >> dims >> offset;
      std::size_t n = 1;
      std::size_t pos = 0;
      while (pos < dims.size()) {
        std::size_t next = dims.find('x', pos);
        if (next == std::string::npos) next = dims.size();
        const Index d = std::stoll(dims.substr(pos, next - pos));
        t.shape.push_back(d);
        n *= static_cast<std::size_t>(d);
        pos = next + 1;
      }
      t.data.resize(n);
      ck.tensors.push_back(std::move(t));
    } else if (kind == "data") {
      ls >> total;
      break;
    } else {
      throw DataError("checkpoint: unknown manifest entry '" + kind + "' in " +
                      path);
    }
  }
  std::size_t expect = 0;
  for (const auto& t : ck.tensors) expect += t.data.size();
  if (expect != total) {
    throw DataError("checkpoint: manifest/payload size mismatch in " + path);
  }
  for (auto& t : ck.tensors) {
    read_doubles_le(in, t.data.data(), t.data.size(), path);
  }
  return ck;
}

Checkpoint net_checkpoint(Net& net) {
  Checkpoint ck;
  for (auto& p : net.params()) {
    NamedTensor t;
    t.name = p.name;
    t.shape = {p.value->size()};
    t.data.assign(p.value->data(), p.value->data() + p.value->size());
    ck.tensors.push_back(std::move(t));
  }
  for (auto* wb : net.whiten_blocks()) {
    ck.meta.emplace_back(wb->name() + ".spec", wb->spec().str());
    auto dump_cov = [&](const std::string& name, const RunningCov& rc) {
      NamedTensor t;
      t.name = name;
      const Index n = rc.sigma_hat.n();
      t.shape = {n, n};
      t.data.assign(rc.sigma_hat.mat().data(),
                    rc.sigma_hat.mat().data() + n * n);
      ck.tensors.push_back(std::move(t));
      ck.meta.emplace_back(name + ".count", std::to_string(rc.count));
    };
    dump_cov(wb->name() + ".sigma_hat", wb->state().main);
    if (wb->spec().standardize_first) {
      dump_cov(wb->name() + ".sigma_hat_std", wb->state().standardizer);
    }
  }
  return ck;
}

void net_restore(Net& net, const Checkpoint& ck) {
  for (auto& p : net.params()) {
    const NamedTensor* t = ck.find(p.name);
    if (!t || static_cast<Index>(t->data.size()) != p.value->size()) {
      throw DataError("checkpoint: missing or mismatched tensor '" + p.name +
                      "'");
    }
    *p.value = Eigen::Map<const Vector>(t->data.data(),
                                        static_cast<Index>(t->data.size()));
  }
  auto meta_value = [&](const std::string& key) -> const std::string* {
    for (const auto& [k, v] : ck.meta) {
      if (k == key) return &v;
    }
    return nullptr;
  };
  for (auto* wb : net.whiten_blocks()) {
    auto load_cov = [&](const std::string& name, RunningCov& rc) {
      const NamedTensor* t = ck.find(name);
      if (!t || t->shape.size() != 2) {
        throw DataError("checkpoint: missing running covariance '" + name +
                        "'");
      }
      const Index n = t->shape[0];
      Matrix m = Eigen::Map<const Matrix>(t->data.data(), n, n);
      rc.sigma_hat = SymMatrix::from_full(m);
      if (const std::string* c = meta_value(name + ".count")) {
        rc.count = std::stol(*c);
      }
    };
    load_cov(wb->name() + ".sigma_hat", wb->state().main);
    if (wb->spec().standardize_first) {
      load_cov(wb->name() + ".sigma_hat_std", wb->state().standardizer);
    }
    wb->state().main_memo.at_count = -1;
    wb->state().standardizer_memo.at_count = -1;
  }
}

}  // namespace whiten
