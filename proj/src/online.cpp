#include "latmap/online.hpp"

#include <cstdio>
#include <sstream>

#include "latmap/error.hpp"

namespace latmap {

void OnlineConfig::validate() const {
  if (t_update < 1) throw Error(ErrorKind::kInvalidArgument, "online: t_update must be >= 1");
  if (k_update < 1) throw Error(ErrorKind::kInvalidArgument, "online: k_update must be >= 1");
  if (!(eta > 0.0)) throw Error(ErrorKind::kInvalidArgument, "online: eta must be positive");
  if (!(lr_decoder > 0.0)) throw Error(ErrorKind::kInvalidArgument, "online: lr_decoder must be positive");
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "online: batch_size must be >= 1");
}

const char* to_string(SkipReason reason) {
  switch (reason) {
    case SkipReason::kNone: return "";
    case SkipReason::kOffTick: return "off_tick";
    case SkipReason::kGrasping: return "grasping";
    case SkipReason::kNoFrame: return "no_frame";
    case SkipReason::kEmptyFrame: return "empty_frame";
  }
  return "unknown";
}

OnlineMapper::OnlineMapper(LatentGrid grid, MlpDecoder decoder, OnlineConfig config)
    : grid_(std::move(grid)), decoder_(std::move(decoder)), config_(config) {
  config_.validate();
  if (decoder_.in_dim() != grid_.encoded_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "online: decoder input does not match grid encoding width");
  }
  train_cfg_.batch_size = config_.batch_size;
  train_cfg_.lr_grid = config_.eta;
  train_cfg_.lr_decoder = config_.lr_decoder;
  train_cfg_.adam = config_.adam;
  train_cfg_.freeze_decoder = config_.freeze_decoder;
  train_cfg_.seed = config_.seed;
}

StepReport OnlineMapper::step(const CameraFrame* frame, bool grasping) {
  StepReport report;
  report.tau = ++tau_;
  if (tau_ % config_.t_update != 0) {
    report.skip = SkipReason::kOffTick;
  } else if (grasping) {
    report.skip = SkipReason::kGrasping;
  } else if (frame == nullptr) {
    report.skip = SkipReason::kNoFrame;
  } else {
    // Dynamic patches flagged in the frame's mask are dropped here.
    BackProjection bp = back_project(*frame, &grid_.config().bounds);
    report.ingest_skipped = bp.skipped;
    report.num_samples = bp.batch.size();
    if (bp.batch.empty()) {
      report.skip = SkipReason::kEmptyFrame;
    } else {
      BatchSampler sampler(bp.batch.size(), config_.batch_size,
                           config_.seed ^ (static_cast<std::uint64_t>(tau_) * 0x9E3779B97F4A7C15ull));
      report.losses.reserve(static_cast<std::size_t>(config_.k_update));
      SampleBatch batch;
      for (int k = 0; k < config_.k_update; ++k) {
        bp.batch.select_into(sampler.next(), batch);
        report.losses.push_back(train_step(grid_, decoder_, batch, train_cfg_, state_));
      }
      report.updated = true;
      total_steps_ += config_.k_update;
    }
  }
  log_.push_back(report);
  return report;
}

std::vector<StepReport> replay(OnlineMapper& mapper, const std::vector<StreamStep>& stream,
                               const FrameProvider& frames) {
  std::vector<StepReport> out;
  out.reserve(stream.size());
  const std::int64_t period = mapper.config().t_update;
  for (const auto& s : stream) {
    // Frames are only read on steps that can update.
    const bool tick = (mapper.tau() + 1) % period == 0;
    if (s.frame_id && tick && !s.grasping) {
      const CameraFrame frame = frames(*s.frame_id);
      out.push_back(mapper.step(&frame, s.grasping));
    } else {
      out.push_back(mapper.step(nullptr, s.grasping));
    }
  }
  return out;
}

std::string reports_to_csv(const std::vector<StepReport>& reports) {
  std::ostringstream os;
  os << "tau,updated,skip_reason,num_samples,optimization_steps,first_loss,last_loss\n";
  char buf[64];
  for (const auto& r : reports) {
    os << r.tau << ',' << (r.updated ? 1 : 0) << ',' << to_string(r.skip) << ',' << r.num_samples << ','
       << r.optimization_steps() << ',';
    if (!r.losses.empty()) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g", r.losses.front(), r.losses.back());
      os << buf;
    } else {
      os << ',';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace latmap
