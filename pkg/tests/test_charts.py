import numpy as np

from evaluation.charts import create_embedding_scatter, create_trajectory_chart, write_chart


class TestCharts:
    def test_trajectory_has_two_traces_per_channel(self, rng):
        gt = rng.normal(size=(30, 7))
        fig = create_trajectory_chart(gt + 1.0, gt, title="s", start_frame=25)
        assert len(fig.data) == 14
        np.testing.assert_allclose(fig.data[0].x[0], 1.0)

    def test_embedding_scatter(self, rng, tmp_path):
        emb = rng.normal(size=(12, 8))
        fig = create_embedding_scatter(emb, ["a"] * 6 + ["b"] * 6, kinds=["gt"] * 10 + ["pred"] * 2)
        path = write_chart(fig, tmp_path / "plots" / "emb.html")
        assert path.exists()
        assert "plotly" in path.read_text(encoding="utf-8")
