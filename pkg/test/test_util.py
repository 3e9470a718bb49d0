import threading
import time
import unittest

from eksim.util import parallel_map, timestamp

from test.eksim_test_util import EksimTest


class ParallelMapTest(EksimTest):

    def test_keeps_input_order(self):
        def slow_square(x):
            time.sleep(0.01 * (5 - x))
            return x * x

        for threads in (1, 4):
            self.assertEqual(parallel_map(slow_square, range(5),
                                          threads=threads),
                             [0, 1, 4, 9, 16])

    def test_single_thread_runs_inline(self):
        seen = parallel_map(lambda _: threading.current_thread(), [1, 2, 3],
                            threads=1)
        self.assertEqual(set(seen), {threading.current_thread()})

    def test_errors_propagate(self):
        def fail(x):
            if x == 2:
                raise ValueError("two")
            return x

        with self.assertRaises(ValueError):
            parallel_map(fail, range(4), threads=2)

    def test_empty(self):
        self.assertEqual(parallel_map(abs, [], threads=3), [])

    def test_timestamp_is_utc(self):
        self.assertTrue(timestamp().endswith("+00:00"))


if __name__ == "__main__":
    unittest.main()
