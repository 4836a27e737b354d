#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <sys/stat.h>

#include "conns/oracle_process.hpp"

using namespace conns;

namespace {

// Writes an executable shell stub and returns its path.
std::string write_stub(const char* name, const std::string& body) {
    std::string path = (std::filesystem::temp_directory_path() / name).string();
    {
        std::ofstream out(path);
        out << "#!/bin/sh\n" << body;
    }
    chmod(path.c_str(), 0755);
    return path;
}

}  // namespace

TEST(ExternalOracle, ConstantNotContradiction) {
    std::string stub = write_stub("conns_oracle_not.sh",
                                  "while read line; do echo NOT_CONTRADICTION; done\n");
    ExternalOracle oracle({stub});
    EXPECT_EQ(oracle.judge(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt}),
              Verdict::NotContradiction);
    // every pending pair becomes Ignored under this judge
    EXPECT_EQ(mine_hard_negative(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt}, oracle),
              Relation::Ignored);
    std::remove(stub.c_str());
}

TEST(ExternalOracle, ConstantContradiction) {
    std::string stub =
        write_stub("conns_oracle_yes.sh", "while read line; do echo CONTRADICTION; done\n");
    ExternalOracle oracle({stub});
    EXPECT_EQ(mine_hard_negative(Attrs{"left", std::nullopt}, Attrs{"left", std::nullopt}, oracle),
              Relation::Negative);
    std::remove(stub.c_str());
}

TEST(ExternalOracle, MalformedReplyIsProtocolViolation) {
    std::string stub = write_stub("conns_oracle_bad.sh", "while read line; do echo maybe; done\n");
    ExternalOracle oracle({stub});
    EXPECT_THROW(oracle.judge(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt}),
                 ProtocolViolation);
    std::remove(stub.c_str());
}

// The request is two TAB-separated JSON-escaped fields rendering
// "location=<v>;characteristics=<v>" with null for absent values.
TEST(ExternalOracle, WireFormatMatchesContract) {
    std::string reply_path =
        (std::filesystem::temp_directory_path() / "conns_oracle_capture.txt").string();
    std::remove(reply_path.c_str());
    std::string stub = write_stub(
        "conns_oracle_capture.sh",
        "while read line; do printf '%s\\n' \"$line\" >> " + reply_path +
            "; echo NOT_CONTRADICTION; done\n");
    {
        ExternalOracle oracle({stub});
        oracle.judge(Attrs{"left lobe", std::nullopt}, Attrs{std::nullopt, "small"});
    }
    std::ifstream in(reply_path);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line,
              "\"location=left lobe;characteristics=null\"\t\"location=null;characteristics=small\"");
    std::remove(reply_path.c_str());
    std::remove(stub.c_str());
}

TEST(ExternalOracle, CachesRepeatedQueries) {
    std::string count_path =
        (std::filesystem::temp_directory_path() / "conns_oracle_count.txt").string();
    std::remove(count_path.c_str());
    std::string stub = write_stub("conns_oracle_counting.sh",
                                  "while read line; do echo x >> " + count_path +
                                      "; echo CONTRADICTION; done\n");
    {
        ExternalOracle oracle({stub});
        for (int i = 0; i < 5; ++i)
            oracle.judge(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt});
    }
    std::ifstream in(count_path);
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1);
    std::remove(count_path.c_str());
    std::remove(stub.c_str());
}

TEST(ExternalOracle, DeadChildIsOracleFailure) {
    std::string stub = write_stub("conns_oracle_dead.sh", "exit 0\n");
    ExternalOracle oracle({stub});
    EXPECT_THROW(oracle.judge(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt}),
                 OracleFailure);
    std::remove(stub.c_str());
}

TEST(ExternalOracle, SlowChildTimesOut) {
    std::string stub = write_stub("conns_oracle_slow.sh", "while read line; do sleep 5; done\n");
    ExternalOracle oracle({stub}, /*timeout_ms=*/200);
    EXPECT_THROW(oracle.judge(Attrs{"left", std::nullopt}, Attrs{"right", std::nullopt}), Timeout);
    std::remove(stub.c_str());
}
