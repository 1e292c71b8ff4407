#include "scn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <fstream>

namespace scn {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'C', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void CheckpointWriter::write(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["metadata"] = meta_;
  header["sections"] = sections_;
  nlohmann::json dir = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    dir.push_back({{"section", e.section},
                   {"kind", e.kind},
                   {"name", e.name},
                   {"dtype", e.dtype},
                   {"rows", e.rows},
                   {"cols", e.cols},
                   {"offset", offset},
                   {"bytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  header["tensors"] = std::move(dir);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries_) {
      out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    }
    out.flush();
    if (!out) throw IoError("failed while writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), file.begin())) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const std::uint64_t header_size = get_u64(file.data() + 8);
  if (header_size > file.size() - 16) throw IoError("truncated checkpoint header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.begin() + 16, file.begin() + 16 + static_cast<std::ptrdiff_t>(header_size));
    meta_ = header.at("metadata");
    sections_ = header.at("sections").get<std::vector<std::string>>();
    for (const auto& t : header.at("tensors")) {
      Entry e;
      e.section = t.at("section").get<std::string>();
      e.kind = t.at("kind").get<std::string>();
      e.name = t.at("name").get<std::string>();
      e.dtype = t.at("dtype").get<std::string>();
      e.rows = t.at("rows").get<std::int64_t>();
      e.cols = t.at("cols").get<std::int64_t>();
      e.offset = t.at("offset").get<std::size_t>();
      const std::size_t bytes = t.at("bytes").get<std::size_t>();
      const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
      if (width == 0) throw IoError("unknown tensor dtype '" + e.dtype + "'");
      if (e.rows < 0 || e.cols < 0 || bytes != width * static_cast<std::size_t>(e.rows * e.cols)) {
        throw IoError("inconsistent size for tensor '" + e.name + "'");
      }
      entries_.push_back(std::move(e));
      if (entries_.back().offset + bytes > file.size() - 16 - header_size) {
        throw IoError("truncated tensor data in " + path.string());
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + ex.what());
  }
  data_.assign(file.begin() + 16 + static_cast<std::ptrdiff_t>(header_size), file.end());
}

bool CheckpointReader::has_section(const std::string& section) const {
  return std::find(sections_.begin(), sections_.end(), section) != sections_.end();
}

std::vector<std::string> CheckpointReader::sections() const { return sections_; }

}  // namespace scn
