// SPDX-License-Identifier: Apache-2.0
// Copyright (C) 2026 The ltag authors

#include "ltag/common.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace ltag {

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::Prach: return "PRACH";
    case MsgType::Pusch: return "PUSCH";
    case MsgType::Pucch: return "PUCCH";
  }
  return "?";
}

MsgType msg_type_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (u == "PRACH" || u == "0") return MsgType::Prach;
  if (u == "PUSCH" || u == "1") return MsgType::Pusch;
  if (u == "PUCCH" || u == "2") return MsgType::Pucch;
  throw InvalidParameter("unknown message type '" + s + "'");
}

std::string to_string(const MessageId& id) {
  return fmt::format("{}/{}/{:#06x}/{}/{}", id.earfcn, id.pci, id.rnti, to_string(id.type), id.subframe);
}

double linear_to_db(double lin) { return 10.0 * std::log10(std::max(lin, 1e-300)); }

}  // namespace ltag
