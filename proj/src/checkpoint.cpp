#include "msnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "msnet/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as raw little-endian float32");

namespace fs = std::filesystem;
using nlohmann::json;

namespace msnet {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'N', 'E', 'T', 'C', 'K', '\x01'};

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  require(in.gcount() == 8, Errc::checkpoint_corrupt, "checkpoint truncated in header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  require(ck.stage == 1 || ck.stage == 2, Errc::invalid_argument, "checkpoint stage must be 1 or 2");
  require(ck.step >= 0, Errc::invalid_argument, "checkpoint step must be >= 0");

  json header;
  header["version"] = kCheckpointVersion;
  header["stage"] = ck.stage;
  header["step"] = ck.step;
  header["reduction"] = "mean";
  header["config"] = ck.config;
  json jtensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    require(!t.empty(), Errc::invalid_argument, "checkpoint tensor '" + name + "' is empty");
    jtensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  header["tensors"] = std::move(jtensors);
  std::string header_text = header.dump();

  // Write to a sibling temp file and rename so a crash mid-save never leaves
  // a half-written checkpoint at the target path.
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot open " + tmp.string() + " for writing");
    out.write(kMagic, 8);
    write_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : ck.tensors)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    require(out.good(), Errc::io_error, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  require(!ec, Errc::io_error, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_error, "cannot open checkpoint " + path);

  char magic[8];
  in.read(magic, 8);
  require(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, Errc::checkpoint_corrupt,
          "not a checkpoint file: " + path);

  std::uint64_t header_len = read_u64(in);
  require(header_len > 0 && header_len < (1ull << 30), Errc::checkpoint_corrupt,
          "implausible checkpoint header length");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  require(static_cast<std::uint64_t>(in.gcount()) == header_len, Errc::checkpoint_corrupt,
          "checkpoint truncated in header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    fail(Errc::checkpoint_corrupt, std::string("checkpoint header parse error: ") + e.what());
  }

  Checkpoint ck;
  try {
    int version = header.at("version").get<int>();
    require(version == kCheckpointVersion, Errc::checkpoint_version_mismatch,
            "checkpoint version " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
    std::string reduction = header.at("reduction").get<std::string>();
    require(reduction == "mean", Errc::checkpoint_version_mismatch,
            "checkpoint uses '" + reduction + "' loss reduction, this build uses 'mean'");
    ck.stage = header.at("stage").get<int>();
    ck.step = header.at("step").get<std::int64_t>();
    ck.config = header.at("config");
    require(ck.stage == 1 || ck.stage == 2, Errc::checkpoint_corrupt, "checkpoint stage must be 1 or 2");
    require(ck.step >= 0, Errc::checkpoint_corrupt, "checkpoint step must be >= 0");

    std::vector<char> payload(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    for (const auto& jt : header.at("tensors")) {
      std::string name = jt.at("name").get<std::string>();
      auto shape = jt.at("shape").get<std::vector<int>>();
      std::uint64_t offset = jt.at("offset").get<std::uint64_t>();
      require(!shape.empty(), Errc::checkpoint_corrupt, "tensor '" + name + "' has empty shape");
      std::uint64_t count = 1;
      for (int d : shape) {
        require(d > 0, Errc::checkpoint_corrupt, "tensor '" + name + "' has non-positive dimension");
        count *= static_cast<std::uint64_t>(d);
      }
      require(offset + count * sizeof(float) <= payload.size(), Errc::checkpoint_corrupt,
              "tensor '" + name + "' extends past end of checkpoint payload");
      Tensor<float> t(shape);
      std::memcpy(t.data(), payload.data() + offset, count * sizeof(float));
      require(ck.tensors.emplace(std::move(name), std::move(t)).second, Errc::checkpoint_corrupt,
              "duplicate tensor name in checkpoint");
    }
  } catch (const json::exception& e) {
    fail(Errc::checkpoint_corrupt, std::string("checkpoint header field error: ") + e.what());
  }
  return ck;
}

}  // namespace msnet
