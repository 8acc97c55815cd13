#include <gtest/gtest.h>

#include "webtriples/sandbox.hpp"

using namespace webtriples;

namespace {

std::string runner() { return "python3 " + shell_quote(WEBTRIPLES_FAKE_RUNNER); }

SandboxRequest req(std::string src, double timeout = 5.0) {
  return {std::move(src), "<p>x</p>", timeout, 100};
}

SandboxErrorKind kind_of(Sandbox& sb, const SandboxRequest& r) {
  try {
    sb.run(r);
  } catch (const SandboxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected SandboxError";
  return SandboxErrorKind::Crash;
}

}  // namespace

TEST(WireFormat, RequestRoundTrip) {
  const SandboxRequest r{"def parse(h): return []", "<p>é</p>", 12.5, 7};
  EXPECT_EQ(sandbox_request_from_json(to_json(r)), r);
  auto bad = to_json(r);
  bad["timeout_seconds"] = 61;
  EXPECT_THROW(sandbox_request_from_json(bad), DataError);
}

TEST(WireFormat, ResponseRoundTrip) {
  SandboxResponse ok;
  ok.triples = {{"a", "b", "c"}};
  ok.truncated = true;
  ok.wall_time_seconds = 0.5;
  EXPECT_EQ(sandbox_response_from_json(to_json(ok)), ok);
  SandboxResponse err;
  err.status = SandboxStatus::Error;
  err.error_message = "ValueError: x";
  err.traceback_tail = "tb";
  EXPECT_EQ(sandbox_response_from_json(to_json(err)), err);
  SandboxResponse to;
  to.status = SandboxStatus::Timeout;
  EXPECT_EQ(parse_sandbox_output(to_json(to).dump() + "\n"), to);
}

TEST(WireFormat, Violations) {
  auto kind = [](const std::string& out) {
    try {
      parse_sandbox_output(out);
    } catch (const SandboxError& e) {
      return e.kind();
    }
    return SandboxErrorKind::Timeout;
  };
  EXPECT_EQ(kind(""), SandboxErrorKind::Crash);
  EXPECT_EQ(kind("not json"), SandboxErrorKind::BadOutput);
  EXPECT_EQ(kind(R"({"status":"weird"})"), SandboxErrorKind::BadOutput);
  EXPECT_EQ(kind(R"({"status":"ok","triples":[["a","b",3]]})"), SandboxErrorKind::BadOutput);
  EXPECT_EQ(kind(R"({"status":"error"})"), SandboxErrorKind::BadOutput);
  std::string long_tb(5000, 'x');
  const auto r = sandbox_response_from_json(
      {{"status", "error"}, {"error_message", "m"}, {"traceback_tail", long_tb}});
  EXPECT_EQ(r.traceback_tail.size(), kTracebackTailLimit);
}

TEST(ProcessSandbox, OkErrorTimeout) {
  ProcessSandbox sb(runner(), 5.0);
  const auto ok = sb.run(req("def parse(html):\n    return [('a','b','c')]\n"));
  EXPECT_EQ(ok.status, SandboxStatus::Ok);
  EXPECT_EQ(ok.triples, (std::vector<std::array<std::string, 3>>{{"a", "b", "c"}}));

  const auto err = sb.run(req("def parse(html):\n    raise ValueError('x')\n"));
  EXPECT_EQ(err.status, SandboxStatus::Error);
  EXPECT_NE(err.error_message.find("ValueError: x"), std::string::npos);

  const auto start = std::chrono::steady_clock::now();
  const auto slow = sb.run(req("while True:\n    pass\n", 1.0));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(slow.status, SandboxStatus::Timeout);
  EXPECT_LT(elapsed, 4.0);
}

TEST(ProcessSandbox, PrintingScriptDoesNotCorruptProtocol) {
  ProcessSandbox sb(runner(), 5.0);
  const auto r = sb.run(req("print('noise')\ndef parse(html):\n    print('more')\n    return []\n"));
  EXPECT_EQ(r.status, SandboxStatus::Ok);
}

TEST(ProcessSandbox, HostSideFailures) {
  ProcessSandbox crash("cat > /dev/null; exit 3");
  EXPECT_EQ(kind_of(crash, req("x")), SandboxErrorKind::Crash);
  ProcessSandbox killed("cat > /dev/null; kill -9 $$");
  EXPECT_EQ(kind_of(killed, req("x")), SandboxErrorKind::Crash);
  ProcessSandbox garbage("cat > /dev/null; echo '[1,2'");
  EXPECT_EQ(kind_of(garbage, req("x")), SandboxErrorKind::BadOutput);
  ProcessSandbox hang("cat > /dev/null; sleep 30", 0.5);
  EXPECT_EQ(kind_of(hang, req("x", 0.5)), SandboxErrorKind::Timeout);
}
