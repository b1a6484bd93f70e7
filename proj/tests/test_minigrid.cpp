#include <gtest/gtest.h>

#include <set>

#include "gridplan/minigrid_generate.hpp"
#include "support/test_util.hpp"

using namespace gridplan;
using testutil::mg_actions;

namespace {

MgInstance unlock_sample() {
  return testutil::mg_from_text(testutil::fixture("unlock_sample.txt"), MgTask::Unlock, Dir::Right);
}
MgInstance door_key_sample() {
  return testutil::mg_from_text(testutil::fixture("door_key_sample.txt"), MgTask::DoorKey, Dir::Down);
}
MgInstance unlock_pickup_sample() {
  return testutil::mg_from_text(testutil::fixture("unlock_pickup_sample.txt"), MgTask::UnlockPickup, Dir::Down);
}

}  // namespace

TEST(MiniGrid, UnlockSampleKeyPickup) {
  const auto inst = unlock_sample();
  ASSERT_EQ(inst.agent, (Pos{2, 3}));
  const auto out = mg_run(inst, mg_actions({"LEFT", "MOVE", "RIGHT", "PICKUP"}), StepMode::Strict);
  EXPECT_TRUE(out.violations.empty());
  EXPECT_EQ(out.final_state.holding, Holding::Key);
  EXPECT_EQ(out.final_state.agent, (Pos{1, 3}));
  EXPECT_EQ(out.final_state.at({1, 4}), CellKind::Empty);
}

TEST(MiniGrid, UnlockSampleTailFacesWrongCell) {
  // The printed sequence ends facing (3,4), one cell short of the door.
  const auto out = mg_run(unlock_sample(), mg_actions({"LEFT", "MOVE", "RIGHT", "PICKUP", "RIGHT", "MOVE", "MOVE",
                                                       "LEFT", "UNLOCK"}));
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.final_state.agent, (Pos{3, 3}));
  ASSERT_EQ(out.violations.size(), 1u);
  EXPECT_EQ(out.violations[0].reason, MgViolationReason::NoDoor);
}

TEST(MiniGrid, MoveIntoWallIsLoggedNoOp) {
  auto inst = unlock_sample();
  inst.facing = Dir::Up;
  inst.agent = {1, 1};
  const auto s = mg_step(initial_state(inst), MgAction::Move, inst, StepMode::Lenient);
  EXPECT_EQ(s.agent, (Pos{1, 1}));
  EXPECT_EQ(s.steps_used, 1);
  ASSERT_EQ(s.violations.size(), 1u);
  EXPECT_EQ(s.violations[0].reason, MgViolationReason::Blocked);
  EXPECT_THROW(mg_step(initial_state(inst), MgAction::Move, inst, StepMode::Strict), StrictViolation);
}

TEST(MiniGrid, DropWithNothingHeld) {
  const auto s = mg_step(initial_state(unlock_sample()), MgAction::Drop, unlock_sample(), StepMode::Lenient);
  ASSERT_EQ(s.violations.size(), 1u);
  EXPECT_EQ(s.violations[0].reason, MgViolationReason::NothingHeld);
}

TEST(MiniGrid, UnlockNeedsKeyAndClosedDoor) {
  auto inst = unlock_sample();
  inst.agent = {3, 4};
  inst.facing = Dir::Right;
  auto s = mg_step(initial_state(inst), MgAction::Unlock, inst, StepMode::Lenient);
  EXPECT_EQ(s.violations.back().reason, MgViolationReason::NoKey);
  EXPECT_FALSE(s.door_open);
}

TEST(MiniGrid, DoorKeySampleSolution) {
  const auto inst = door_key_sample();
  const auto actions =
      mg_actions({"LEFT", "MOVE", "MOVE", "LEFT", "PICKUP", "MOVE", "MOVE", "MOVE", "MOVE", "RIGHT",
                  "UNLOCK", "MOVE", "MOVE", "MOVE", "RIGHT", "MOVE", "MOVE", "MOVE", "MOVE", "MOVE"});
  ASSERT_EQ(actions.size(), 20u);
  const auto out = mg_run(inst, actions, StepMode::Strict);
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.final_state.agent, (Pos{6, 6}));
  EXPECT_EQ(out.steps, 20);
  EXPECT_EQ(out.terminated_by, Termination::Success);
}

TEST(MiniGrid, UnlockPickupSampleSolution) {
  const auto inst = unlock_pickup_sample();
  ASSERT_EQ(inst.agent, (Pos{3, 2}));
  const auto actions = mg_actions({"LEFT", "MOVE", "PICKUP", "LEFT", "MOVE", "MOVE", "RIGHT", "MOVE",
                                   "UNLOCK", "MOVE", "MOVE", "RIGHT", "MOVE", "MOVE", "MOVE", "LEFT",
                                   "MOVE", "MOVE", "LEFT", "DROP", "RIGHT", "PICKUP"});
  ASSERT_EQ(actions.size(), 22u);
  const auto out = mg_run(inst, actions, StepMode::Strict);
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.steps, 22);
  EXPECT_EQ(inst.max_steps, 8 * 6 * 11);
  EXPECT_DOUBLE_EQ(out.reward, 1.0 - 0.9 * 22.0 / 528.0);
  EXPECT_NEAR(out.reward, 0.96, 0.005);
  EXPECT_EQ(out.final_state.at({3, 8}), CellKind::Key);
}

TEST(MiniGrid, RewardAtMaxStepsIsPointOne) {
  auto inst = door_key_sample();
  const auto plan = mg_greedy(inst);
  inst.max_steps = static_cast<int>(plan.size());
  const auto out = mg_run(inst, plan);
  EXPECT_TRUE(out.success);
  EXPECT_NEAR(out.reward, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(mg_reward(10, 100), 0.91);
}

TEST(MiniGrid, StopsAtFirstSuccess) {
  const auto inst = unlock_sample();
  auto plan = mg_greedy(inst);
  const auto n = plan.size();
  plan.push_back(MgAction::Move);
  const auto out = mg_run(inst, plan);
  EXPECT_TRUE(out.success);
  EXPECT_EQ(out.trace.size(), n);
}

TEST(MiniGrid, NoSuccessMeansZeroReward) {
  const auto out = mg_run(unlock_sample(), mg_actions({"LEFT", "LEFT"}));
  EXPECT_FALSE(out.success);
  EXPECT_EQ(out.reward, 0.0);
}

TEST(MgRender, SampleGridsRoundTripByteExact) {
  for (const char* name : {"unlock_sample.txt", "door_key_sample.txt", "unlock_pickup_sample.txt"}) {
    const auto text = testutil::strip_final_newline(testutil::fixture(name));
    EXPECT_EQ(mg_render(mg_parse(text)), text) << name;
  }
  EXPECT_EQ(mg_parse(testutil::fixture("unlock_pickup_sample.txt")).style, MgGridStyle::Compact);
  EXPECT_EQ(mg_parse(testutil::fixture("door_key_sample.txt")).style, MgGridStyle::Expanded);
}

TEST(MgRender, WhitespaceInsensitiveParse) {
  const auto text = testutil::fixture("unlock_sample.txt");
  std::string spaced;
  for (char c : text) {
    spaced += c;
    if (c == ',') spaced += "  ";
  }
  const auto a = mg_parse(text), b = mg_parse(spaced);
  EXPECT_EQ(a.cells, b.cells);
  EXPECT_EQ(a.agent, b.agent);
  EXPECT_EQ(mg_render(b), testutil::strip_final_newline(text));
}

TEST(MgRender, OpenDoorRendersEmpty) {
  const auto inst = unlock_pickup_sample();
  const auto out = mg_run(inst, mg_actions({"LEFT", "MOVE", "PICKUP", "LEFT", "MOVE", "MOVE", "RIGHT", "MOVE",
                                            "UNLOCK"}));
  ASSERT_TRUE(out.final_state.door_open);
  const auto text = mg_render(out.final_state, MgGridStyle::Compact);
  EXPECT_NE(text.find(R"(["WALL","","","","AGENT","","","","","","WALL"])"), std::string::npos);
  EXPECT_EQ(text.find("DOOR"), std::string::npos);
  EXPECT_EQ(text.find("KEY"), std::string::npos);
}

TEST(MgRender, ParseRejections) {
  EXPECT_THROW(mg_parse(R"([["WALL","AGENT"],["AGENT","WALL"]])"), ParseError);
  EXPECT_THROW(mg_parse(R"([["WALL","AGENT"],["WALL"]])"), ParseError);
  EXPECT_THROW(mg_parse(R"([["WALL","AGENT","LAVA"]])"), ParseError);
  EXPECT_THROW(mg_parse(R"([["WALL",""]])"), ParseError);
  try {
    mg_parse("[[\"WALL\",\"AGENT\"],\n[\"WALL\",\"AGENT\"]]");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 1);  // grid row index
  }
  try {
    mg_parse("[[\"WALL\",\n \"AGENT\"");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GE(e.line, 2);
  }
}

TEST(MgJson, RoundTrip) {
  for (const auto& inst : mg_generate(MgTask::UnlockPickup, 20, mg_default_dims(MgTask::UnlockPickup), 4)) {
    const auto s = serialize(inst);
    const auto back = mg_from_json(json::parse(s));
    EXPECT_EQ(serialize(back), s);
    EXPECT_EQ(back.agent, inst.agent);
    EXPECT_EQ(back.facing, inst.facing);
  }
}

TEST(MgGenerate, DoorKeyLayout) {
  for (const auto& inst : mg_generate(MgTask::DoorKey, 100, {8, 8}, 9)) {
    const Pos door = *inst.find(CellKind::Door);
    const Pos key = *inst.find(CellKind::Key);
    const Pos goal = *inst.find(CellKind::Goal);
    EXPECT_LT(key.col, door.col);
    EXPECT_LT(inst.agent.col, door.col);
    EXPECT_GT(goal.col, door.col);
    for (int r = 1; r < 7; ++r)
      if (r != door.row) {
        EXPECT_EQ(inst.at({r, door.col}), CellKind::Wall);
      }
    EXPECT_EQ(inst.max_steps, 8 * 8 * 8);
  }
}

TEST(MgGenerate, ThousandDistinctStableInstances) {
  const auto a = mg_generate(MgTask::Unlock, 1000, mg_default_dims(MgTask::Unlock), 21);
  const auto b = mg_generate(MgTask::Unlock, 1000, mg_default_dims(MgTask::Unlock), 21);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ids.insert(a[i].id);
    ASSERT_EQ(serialize(a[i]), serialize(b[i]));
  }
  EXPECT_EQ(ids.size(), 1000u);
}

TEST(MgGenerate, GreedySolvesGeneratedUnlockAndDoorKey) {
  for (auto task : {MgTask::Unlock, MgTask::DoorKey})
    for (const auto& inst : mg_generate(task, 200, mg_default_dims(task), 2))
      EXPECT_TRUE(mg_run(inst, mg_greedy(inst)).success) << inst.id;
}

TEST(MgGenerate, TooSmall) { EXPECT_THROW(mg_generate(MgTask::Unlock, 1, {6, 6}, 1), GenError); }

TEST(MgProperties, RandomWalkInvariants) {
  Rng rng(5);
  for (auto task : kAllMgTasks) {
    for (const auto& inst : mg_generate(task, 30, mg_default_dims(task), 8)) {
      MgState s = initial_state(inst);
      for (int i = 0; i < 300 && !mg_success(s, inst); ++i) {
        const bool was_open = s.door_open;
        mg_apply(s, kAllMgActions[rng.below(6)], inst, StepMode::Lenient);
        ASSERT_TRUE(!was_open || s.door_open);
        int keys = s.holding == Holding::Key, boxes = s.holding == Holding::Box;
        for (const auto& row : s.cells)
          for (auto c : row) keys += c == CellKind::Key, boxes += c == CellKind::Box;
        ASSERT_EQ(keys, 1);
        ASSERT_EQ(boxes, task == MgTask::UnlockPickup ? 1 : 0);
        const CellKind under = s.at(s.agent);
        ASSERT_TRUE(under == CellKind::Empty || under == CellKind::Goal || (under == CellKind::Door && s.door_open));
      }
    }
  }
}

TEST(MgProperties, RotationGroup) {
  const auto inst = unlock_sample();
  for (auto turn : {MgAction::Left, MgAction::Right}) {
    const auto out = mg_run(inst, {turn, turn, turn, turn});
    EXPECT_EQ(out.final_state.facing, inst.facing);
  }
  EXPECT_EQ(mg_run(inst, {MgAction::Left, MgAction::Right}).final_state.facing, inst.facing);
}

TEST(MgProperties, LenientStrictAgreeOnCleanTraces) {
  for (const auto& inst : mg_generate(MgTask::DoorKey, 50, {8, 8}, 3)) {
    const auto plan = mg_greedy(inst);
    const auto a = mg_run(inst, plan), b = mg_run(inst, plan, StepMode::Strict);
    ASSERT_TRUE(a.violations.empty());
    EXPECT_EQ(a.reward, b.reward);
    EXPECT_EQ(a.trace, b.trace);
  }
}

TEST(MgProperties, RewardDecreasesInSteps) {
  for (int s = 1; s < 100; ++s) EXPECT_GT(mg_reward(s, 100), mg_reward(s + 1, 100));
  EXPECT_LE(mg_reward(1, 100), 1.0);
}
