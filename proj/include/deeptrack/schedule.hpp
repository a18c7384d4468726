// SPDX-License-Identifier: Apache-2.0

#ifndef DEEPTRACK_SCHEDULE_HPP_
#define DEEPTRACK_SCHEDULE_HPP_

#include <stdexcept>

namespace deeptrack {

/// Repeating blocks of `show` input frames followed by `blank` frames with
/// the input withheld.
struct ShowBlankSchedule {
  int total_frames = 40;
  int show = 10;
  int blank = 10;

  void validate() const {
    if (show < 1 || blank < 0 || total_frames < 1) {
      throw std::invalid_argument("ShowBlankSchedule: need show >= 1, blank >= 0, total_frames >= 1");
    }
    if (total_frames % (show + blank) != 0) {
      throw std::invalid_argument("ShowBlankSchedule: show + blank must divide total_frames");
    }
  }

  static ShowBlankSchedule all_shown(int frames) { return {frames, frames, 0}; }

  bool is_blank(int frame) const { return frame % (show + blank) >= show; }
  /// 1-based position inside the blank run, 0 for shown frames.
  int blank_offset(int frame) const {
    const int pos = frame % (show + blank);
    return pos >= show ? pos - show + 1 : 0;
  }
  /// Index of the most recent shown frame at or before `frame`.
  int last_shown(int frame) const { return frame - blank_offset(frame); }
  int blocks() const { return total_frames / (show + blank); }
};

}  // namespace deeptrack

#endif  // DEEPTRACK_SCHEDULE_HPP_
