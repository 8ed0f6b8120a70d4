#include "cilab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "cilab/errors.hpp"

namespace cilab {

namespace {

using nlohmann::json;

constexpr char kModelMagic[8] = {'C', 'I', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr char kDataMagic[8] = {'C', 'I', 'L', 'D', 'A', 'T', 'A', '1'};

void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("checkpoint: write failed");
}

void read_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw IoError("checkpoint: read failed or file truncated");
}

void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof(v)); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  read_bytes(in, &v, sizeof(v));
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  write_bytes(out, s.data(), s.size());
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  read_bytes(in, s.data(), n);
  return s;
}

void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  write_u64(out, n);
  write_bytes(out, data, n * sizeof(double));
}

std::vector<double> read_doubles(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<double> v(n);
  read_bytes(in, v.data(), n * sizeof(double));
  return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, m.rows());
  write_u64(out, m.cols());
  write_bytes(out, m.data().data(), m.size() * sizeof(double));
}

Matrix read_matrix(std::istream& in) {
  const std::uint64_t rows = read_u64(in);
  const std::uint64_t cols = read_u64(in);
  Matrix m(rows, cols);
  read_bytes(in, m.data().data(), m.size() * sizeof(double));
  return m;
}

json extractor_meta(const FeatureExtractor& ex) {
  json j;
  j["taps"] = ex.tap_ids;
  std::vector<int> relu;
  for (const AffineLayer& l : ex.layers) relu.push_back(l.relu ? 1 : 0);
  j["relu"] = relu;
  j["param_version"] = ex.param_version;
  return j;
}

void write_extractor(std::ostream& out, const FeatureExtractor& ex) {
  write_u64(out, ex.layers.size());
  for (const AffineLayer& l : ex.layers) {
    write_matrix(out, l.weight);
    write_doubles(out, l.bias.data(), l.bias.size());
  }
}

FeatureExtractor read_extractor(std::istream& in, const json& meta) {
  FeatureExtractor ex;
  const std::uint64_t layers = read_u64(in);
  const std::vector<int> relu = meta.at("relu").get<std::vector<int>>();
  if (relu.size() != layers) throw IntegrityError("checkpoint: relu flags out of sync with layers");
  for (std::uint64_t i = 0; i < layers; ++i) {
    AffineLayer l;
    l.weight = read_matrix(in);
    l.bias = read_doubles(in);
    l.relu = relu[i] != 0;
    ex.layers.push_back(std::move(l));
  }
  ex.tap_ids = meta.at("taps").get<std::vector<std::string>>();
  ex.param_version = meta.at("param_version").get<std::uint64_t>();
  return ex;
}

json head_meta(const Classifier& head) {
  json j;
  if (const auto* lin = std::get_if<LinearClassifier>(&head)) {
    j["kind"] = "linear";
    j["use_bias"] = lin->use_bias;
  } else {
    const auto& cos = std::get<CosineClassifier>(head);
    j["kind"] = "cosine";
    j["scale"] = cos.scale;
    j["scale_learnable"] = cos.scale_learnable;
  }
  return j;
}

void write_head(std::ostream& out, const Classifier& head) {
  std::visit([&out](const auto& h) { write_matrix(out, h.weight); }, head);
  if (const auto* lin = std::get_if<LinearClassifier>(&head))
    write_doubles(out, lin->bias.data(), lin->bias.size());
}

Classifier read_head(std::istream& in, const json& meta) {
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "linear") {
    LinearClassifier lin;
    lin.weight = read_matrix(in);
    lin.bias = read_doubles(in);
    lin.use_bias = meta.at("use_bias").get<bool>();
    return lin;
  }
  if (kind != "cosine") throw IntegrityError("checkpoint: unknown head kind " + kind);
  CosineClassifier cos;
  cos.weight = read_matrix(in);
  cos.scale = meta.at("scale").get<double>();
  cos.scale_learnable = meta.at("scale_learnable").get<bool>();
  return cos;
}

}  // namespace

void save_model(const std::string& path, const Model& model, const std::string& metadata_json,
                std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_model: cannot open " + path);

  json structure;
  structure["stem"] = extractor_meta(model.stem);
  json branches = json::array();
  for (const FeatureExtractor& b : model.branches) branches.push_back(extractor_meta(b));
  structure["branches"] = branches;
  structure["head"] = head_meta(model.head);
  structure["head_classes"] = model.head_classes;
  structure["stem_frozen"] = model.stem_frozen;
  std::vector<int> frozen;
  for (const bool f : model.branch_frozen) frozen.push_back(f ? 1 : 0);
  structure["branch_frozen"] = frozen;
  structure["user"] = metadata_json;

  write_bytes(out, kModelMagic, sizeof(kModelMagic));
  write_u64(out, config_hash);
  write_string(out, structure.dump());
  write_extractor(out, model.stem);
  write_u64(out, model.branches.size());
  for (const FeatureExtractor& b : model.branches) write_extractor(out, b);
  write_head(out, model.head);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_model: cannot open " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw IntegrityError("load_model: bad magic in " + path);

  LoadedModel out;
  out.config_hash = read_u64(in);
  json structure;
  try {
    structure = json::parse(read_string(in));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("load_model: corrupt metadata: ") + e.what());
  }
  out.metadata_json = structure.at("user").get<std::string>();

  out.model.stem = read_extractor(in, structure.at("stem"));
  const std::uint64_t nbranches = read_u64(in);
  const json& branch_meta = structure.at("branches");
  if (branch_meta.size() != nbranches)
    throw IntegrityError("load_model: branch metadata out of sync");
  for (std::uint64_t i = 0; i < nbranches; ++i)
    out.model.branches.push_back(read_extractor(in, branch_meta[i]));
  out.model.head = read_head(in, structure.at("head"));
  out.model.head_classes = structure.at("head_classes").get<std::vector<int>>();
  out.model.stem_frozen = structure.at("stem_frozen").get<bool>();
  for (const int f : structure.at("branch_frozen").get<std::vector<int>>())
    out.model.branch_frozen.push_back(f != 0);
  if (out.model.branch_frozen.size() != out.model.branches.size())
    throw IntegrityError("load_model: frozen flags out of sync");
  return out;
}

void save_classifier(const std::string& path, const Classifier& head,
                     const std::vector<int>& head_classes, std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_classifier: cannot open " + path);
  json structure;
  structure["head"] = head_meta(head);
  structure["head_classes"] = head_classes;
  write_bytes(out, kModelMagic, sizeof(kModelMagic));
  write_u64(out, config_hash);
  write_string(out, structure.dump());
  write_head(out, head);
}

LoadedClassifier load_classifier(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_classifier: cannot open " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw IntegrityError("load_classifier: bad magic in " + path);
  LoadedClassifier out;
  out.config_hash = read_u64(in);
  json structure;
  try {
    structure = json::parse(read_string(in));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("load_classifier: corrupt metadata: ") + e.what());
  }
  out.head = read_head(in, structure.at("head"));
  out.head_classes = structure.at("head_classes").get<std::vector<int>>();
  return out;
}

void save_dataset(const std::string& path, const Dataset& dataset, std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_dataset: cannot open " + path);
  write_bytes(out, kDataMagic, sizeof(kDataMagic));
  write_u64(out, config_hash);
  write_u64(out, dataset.spec.classes);
  write_u64(out, dataset.spec.dim);
  write_u64(out, dataset.spec.train_per_class);
  write_u64(out, dataset.spec.val_per_class);
  write_u64(out, dataset.spec.seed);
  const double radius = dataset.spec.cluster_radius;
  write_bytes(out, &radius, sizeof(radius));
  write_matrix(out, dataset.features);
  write_u64(out, dataset.labels.size());
  for (const int label : dataset.labels) {
    const std::int32_t v = label;
    write_bytes(out, &v, sizeof(v));
  }
}

LoadedDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_dataset: cannot open " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kDataMagic, sizeof(magic)) != 0)
    throw IntegrityError("load_dataset: bad magic in " + path);

  LoadedDataset out;
  out.config_hash = read_u64(in);
  Dataset& ds = out.dataset;
  ds.spec.classes = read_u64(in);
  ds.spec.dim = read_u64(in);
  ds.spec.train_per_class = read_u64(in);
  ds.spec.val_per_class = read_u64(in);
  ds.spec.seed = read_u64(in);
  read_bytes(in, &ds.spec.cluster_radius, sizeof(double));
  ds.features = read_matrix(in);
  const std::uint64_t nlabels = read_u64(in);
  ds.labels.resize(nlabels);
  for (std::uint64_t i = 0; i < nlabels; ++i) {
    std::int32_t v = 0;
    read_bytes(in, &v, sizeof(v));
    ds.labels[i] = v;
  }

  // Rebuild the class-major train/val layout and check it against the
  // stored labels.
  const std::size_t per_class = ds.spec.train_per_class + ds.spec.val_per_class;
  if (ds.features.rows() != ds.spec.classes * per_class || nlabels != ds.features.rows())
    throw IntegrityError("load_dataset: sample counts do not match the header");
  ds.train_by_class.resize(ds.spec.classes);
  ds.val_by_class.resize(ds.spec.classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < ds.spec.classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      if (ds.labels[row] != static_cast<int>(c))
        throw IntegrityError("load_dataset: label layout does not match the header");
      if (s < ds.spec.train_per_class) {
        ds.train_by_class[c].push_back(static_cast<int>(row));
      } else {
        ds.val_by_class[c].push_back(static_cast<int>(row));
      }
    }
  }
  return out;
}

}  // namespace cilab
