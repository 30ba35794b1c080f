#include "bgt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bgt::model {

namespace {

constexpr char kMagic[8] = {'B', 'G', 'T', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_matrix_data(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw ModelError(path_ + ": checkpoint is truncated");
  }

  Matrix matrix_data(std::uint64_t rows, std::uint64_t cols) {
    if (rows > (1u << 30) || cols > (1u << 30)) throw ModelError(path_ + ": implausible tensor shape");
    Matrix m(static_cast<compute::Index>(rows), static_cast<compute::Index>(cols));
    read(reinterpret_cast<char*>(m.data()), sizeof(double) * rows * cols);
    return m;
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const BgtModel& model, std::uint64_t tokenizer_hash,
                     const TrainingCursor& cursor, const AdamMoments* adam, const nlohmann::json& extra) {
  const auto params = model.parameters().all();
  if (adam != nullptr && (adam->m.size() != params.size() || adam->v.size() != params.size())) {
    throw ModelError("optimizer state does not match the parameter list");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ModelError("cannot write " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    const std::string meta = nlohmann::json{{"config", model.config()}, {"extra", extra}}.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, tokenizer_hash);
    put<std::int64_t>(os, cursor.step);
    put<std::int64_t>(os, cursor.epoch);
    put<std::int64_t>(os, cursor.batch);
    put<std::uint64_t>(os, params.size());
    for (const auto* p : params) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put<std::uint64_t>(os, static_cast<std::uint64_t>(p->value.rows()));
      put<std::uint64_t>(os, static_cast<std::uint64_t>(p->value.cols()));
      put_matrix_data(os, p->value);
    }
    put<std::uint8_t>(os, adam != nullptr ? 1 : 0);
    if (adam != nullptr) {
      put<std::int64_t>(os, adam->step);
      for (std::size_t i = 0; i < params.size(); ++i) {
        put_matrix_data(os, adam->m[i]);
        put_matrix_data(os, adam->v[i]);
      }
    }
    if (!os) throw ModelError("failed while writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ModelError("cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ModelError(path.string() + " is not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ModelError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > (1u << 24)) throw ModelError(path.string() + ": implausible metadata length");
  std::string meta(meta_len, '\0');
  r.read(meta.data(), meta.size());
  const auto j = nlohmann::json::parse(meta);
  ck.config = j.at("config").get<ModelConfig>();
  ck.extra = j.value("extra", nlohmann::json::object());
  ck.tokenizer_hash = r.get<std::uint64_t>();
  ck.cursor.step = r.get<std::int64_t>();
  ck.cursor.epoch = r.get<std::int64_t>();
  ck.cursor.batch = r.get<std::int64_t>();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.read(name.data(), name.size());
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    ck.params.emplace_back(std::move(name), r.matrix_data(rows, cols));
  }
  ck.has_adam = r.get<std::uint8_t>() != 0;
  if (ck.has_adam) {
    ck.adam.step = r.get<std::int64_t>();
    for (const auto& [name, value] : ck.params) {
      ck.adam.m.push_back(r.matrix_data(static_cast<std::uint64_t>(value.rows()), static_cast<std::uint64_t>(value.cols())));
      ck.adam.v.push_back(r.matrix_data(static_cast<std::uint64_t>(value.rows()), static_cast<std::uint64_t>(value.cols())));
    }
  }
  return ck;
}

std::unique_ptr<BgtModel> restore_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<BgtModel>(ckpt.config);
  auto params = model->parameters().all();
  if (params.size() != ckpt.params.size()) {
    throw ModelError("checkpoint has " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = ckpt.params[i];
    if (name != params[i]->name || value.rows() != params[i]->value.rows() || value.cols() != params[i]->value.cols()) {
      throw ModelError("checkpoint tensor '" + name + "' " + compute::shape_string(value) + " does not match '" +
                       params[i]->name + "' " + compute::shape_string(params[i]->value));
    }
    params[i]->value = value;
  }
  return model;
}

std::unique_ptr<BgtModel> load_model(const std::filesystem::path& path) { return restore_model(read_checkpoint(path)); }

}  // namespace bgt::model
