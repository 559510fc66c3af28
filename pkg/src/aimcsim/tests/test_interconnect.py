#
# Copyright 2026 The aimcsim Authors. All rights reserved.
#
# SPDX-License-Identifier: Apache-2.0
#
import dataclasses
import unittest

from aimcsim.arch_config import L2Config, default_config, require_valid
from aimcsim.cluster import Dma, DmaDescriptor, DmaDirection, EventUnit, L1Memory, l1_requesters
from aimcsim.engine import Phase, Simulator
from aimcsim.errors import InterconnectError, MappingError
from aimcsim.interconnect import Fabric, L2Memory, Link, LinkRequest, link_transfer
from aimcsim.tests import SimTestCase


def _run_link(capacity, latency, *sizes, broadcast=False):
    sim = Simulator()
    link = Link(sim, "fabric", capacity, latency, broadcast)
    flows = [link_transfer(link, LinkRequest(f"r{index}", size)) for index, size in enumerate(sizes)]
    sim.run_until_idle()
    return link, flows


class TestLink(unittest.TestCase):
    def test_wireless_tile(self):
        _, (flow,) = _run_link(256, 1, 256)
        self.assertEqual(2, flow.first_beat_cycle)
        self.assertEqual(9, flow.last_beat_cycle)

    def test_narrow_wired_tile(self):
        link, (flow,) = _run_link(64, 9, 256)
        self.assertEqual(41, flow.last_beat_cycle)
        self.assertEqual(32, link.busy_cycles)

    def test_equal_flows_share_the_link(self):
        link, flows = _run_link(64, 9, 256, 256)
        self.assertEqual([73, 73], [flow.last_beat_cycle for flow in flows])
        self.assertEqual(64, link.busy_cycles)
        self.assertEqual(4096, link.granted_bits)

    def test_unused_share_is_redistributed(self):
        link, (small, large) = _run_link(64, 9, 1, 256)
        self.assertEqual(10, small.last_beat_cycle)
        self.assertEqual(42, large.last_beat_cycle)
        self.assertEqual(33, link.busy_cycles)
        self.assertEqual({"r1": 1}, link.wait_cycles)

    def test_issue_cycle_delays_the_first_grant(self):
        sim = Simulator()
        link = Link(sim, "fabric", 256, 1)
        flow = link.transfer(LinkRequest("r0", 32, issue_cycle=20))
        sim.run_until_idle()
        self.assertEqual(22, flow.first_beat_cycle)

    def test_broadcast_needs_support(self):
        sim = Simulator()
        link = Link(sim, "fabric", 256, 9)
        with self.assertRaises(InterconnectError):
            link.transfer(LinkRequest("bcast", 256, ("cl0", "cl1")))
        with self.assertRaises(InterconnectError):
            link.transfer(LinkRequest("r0", 256, ()))
        with self.assertRaises(MappingError):
            link.transfer(LinkRequest("r0", 0))

    def test_broadcast_occupies_the_link_once(self):
        sim = Simulator()
        link = Link(sim, "fabric", 256, 1, broadcast_enabled=True)
        flow = link.transfer(LinkRequest("bcast", 256, ("cl0", "cl1", "cl2")))
        sim.run_until_idle()
        self.assertEqual(9, flow.last_beat_cycle)
        self.assertEqual(8, link.busy_cycles)


class TestL2Memory(unittest.TestCase):
    def test_different_banks_share_a_cycle(self):
        l2 = L2Memory(L2Config())
        self.assertEqual([10], l2.l2_access(0, 8, 10))
        self.assertEqual([10], l2.l2_access(8, 8, 10))
        self.assertEqual(0, l2.conflicts)

    def test_same_bank_serializes(self):
        l2 = L2Memory(L2Config())
        l2.l2_access(0, 8, 10)
        self.assertEqual([11], l2.l2_access(128, 8, 10))
        self.assertEqual(1, l2.conflicts)

    def test_sequential_stream_is_conflict_free(self):
        l2 = L2Memory(L2Config())
        for cycle in range(16):
            self.assertEqual([cycle] * 16, l2.l2_access(cycle * 128, 128, cycle))
        self.assertEqual(0, l2.conflicts)
        self.assertEqual(256, l2.accesses)

    def test_out_of_range(self):
        l2 = L2Memory(L2Config(capacity_bytes=1024))
        with self.assertRaises(InterconnectError):
            l2.l2_access(1020, 8, 0)


class TestFabric(SimTestCase):
    def _fabric(self, cfg=None):
        sim = Simulator()
        arch = require_valid(cfg or default_config())
        fabric = Fabric(sim, arch)
        memories = []
        for cluster in range(2):
            memory = L1Memory(sim, f"cl{cluster}.l1", 16, l1_requesters(2))
            fabric.attach(cluster, memory)
            memories.append(memory)
        return sim, fabric, memories

    def test_dma_read_of_a_tile(self):
        sim, fabric, _ = self._fabric()
        events = EventUnit(sim, "cl0.eu", 2)
        dma = Dma(sim, 0, 2, fabric, events)
        done = []
        dma.submit(DmaDescriptor(DmaDirection.L2_TO_L1, 12288, None, 0, "in:0"), done.append)
        sim.run_until_idle()
        self.assertEqual([393], done)
        self.assertEqual(393, events.posted_at("in:0"))
        self.assertEqual(12288, fabric.l2_read_bytes)
        self.assertEqual(0, fabric.l2.conflicts)
        self.assertEqual([(Phase.DMA_READ, 0, 393)], [(e.phase, e.start, e.end) for e in sim.timeline])

    def test_write_finishes_after_the_last_beat(self):
        sim, fabric, _ = self._fabric()
        done = []
        fabric.write_l2("dma0", fabric.endpoint(0, 0, "dma0"), 0, 256, done.append)
        sim.run_until_idle()
        self.assertEqual(1, len(done))
        self.assertGreaterEqual(done[0], 8 + 9)
        self.assertEqual(256, fabric.l2_write_bytes)

    def test_remote_copy_uses_the_neighbour_link(self):
        sim, fabric, memories = self._fabric()
        done = []
        fabric.copy_l1("dma0", fabric.endpoint(0, 0, "dma0"), fabric.endpoint(1, 0, "ext"), 256, done.append)
        sim.run_until_idle()
        self.assertEqual(1, len(done))
        self.assertEqual(["fabric", "peer.cl0-cl1"], [link.name for link in fabric.links()])
        self.assertEqual(0, fabric.read_pool.busy_cycles)
        self.assertEqual(64, memories[1].granted_words["dma"])

    def test_remote_copy_needs_two_clusters(self):
        _, fabric, _ = self._fabric()
        with self.assertRaises(MappingError):
            fabric.copy_l1("dma0", fabric.endpoint(0, 0, "dma0"), fabric.endpoint(0, 64, "ext"), 256, print)

    def test_without_peer_links_copies_share_the_pool(self):
        cfg = default_config()
        cfg = dataclasses.replace(cfg, interconnect=dataclasses.replace(cfg.interconnect, peer_links=False))
        _, fabric, _ = self._fabric(cfg)
        self.assertIs(fabric.write_pool, fabric.peer_link(0, 1))

    def test_broadcast_needs_a_wireless_channel(self):
        _, fabric, _ = self._fabric()
        sinks = [fabric.endpoint(0, 0, "ext"), fabric.endpoint(1, 0, "ext")]
        with self.assertRaises(InterconnectError):
            fabric.broadcast_transfer("bcast", 0, 256, sinks, print)

    def test_finished_transfers_are_kept_for_the_window(self):
        sim, fabric, _ = self._fabric()
        dma = Dma(sim, 0, 2, fabric, EventUnit(sim, "cl0.eu", 2))
        dma.submit(DmaDescriptor(DmaDirection.L2_TO_L1, 12288, None, 0, "in:0"))
        sim.run_until_idle()
        self.assertEqual([(0, 393, 12288)], [(t.start, t.end, t.nbytes) for t in fabric.transfers])
        self.assertEqual((12288, 0), fabric.window_traffic(0, 393))
        self.assertEqual((0, 0), fabric.window_traffic(1, 393))
        self.assertEqual((0, 0), fabric.window_traffic(0, 392))

    def test_unattached_cluster(self):
        _, fabric, _ = self._fabric()
        with self.assertRaises(MappingError):
            fabric.endpoint(5, 0, "dma0")


if __name__ == "__main__":
    unittest.main()
