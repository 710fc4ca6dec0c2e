import { ApiClient } from "./api";
import { debounce, latestWins } from "./debounce";
import { countInTop, diffLists } from "./diff";
import { knobToLatent } from "./knob";
import { KnobPanelState } from "./state";
import type { Factor, RecommendationResponse } from "./types";

const DEBOUNCE_MS = 150;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class KnobPanel {
  private state!: KnobPanelState;
  private readonly requestUpdate: () => void;

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {
    const send = latestWins(
      () => this.fetchPair(),
      (pair) => this.onResponses(pair),
      (err) => this.renderError(err),
    );
    this.requestUpdate = debounce(send, DEBOUNCE_MS);
  }

  async start(): Promise<void> {
    try {
      const factors = await this.api.factors();
      this.state = new KnobPanelState(factors.map((f) => f.name));
      this.renderShell(factors);
    } catch (err) {
      this.renderError(err);
    }
  }

  private async fetchPair(): Promise<{
    baseline: RecommendationResponse;
    manipulated: RecommendationResponse;
  }> {
    const baseline = await this.api.recommendations(this.state.baselineRequest());
    // all sliders disengaged: the manipulated request body equals the
    // baseline one, so reuse the response rather than refetch
    const manipulated = this.state.anyEngaged()
      ? await this.api.recommendations(this.state.manipulatedRequest())
      : baseline;
    return { baseline, manipulated };
  }

  private onResponses(pair: {
    baseline: RecommendationResponse;
    manipulated: RecommendationResponse;
  }): void {
    this.state.baseline = pair.baseline;
    this.state.manipulated = pair.manipulated;
    this.renderLists();
  }

  private renderShell(factors: Factor[]): void {
    this.root.textContent = "";
    const basket = el("div", "basket");
    basket.append(el("h2", undefined, "Fold-in items"));
    const input = el("input");
    input.placeholder = "comma-separated item ids";
    input.addEventListener("change", () => {
      const ids = input.value
        .split(",")
        .map((s) => Number.parseInt(s.trim(), 10))
        .filter((x) => Number.isInteger(x) && x >= 0);
      this.state.setItems(ids);
      this.requestUpdate();
    });
    basket.append(input);

    const sliders = el("div", "sliders");
    sliders.append(el("h2", undefined, "Knobs"));
    for (const factor of factors) {
      sliders.append(this.renderSlider(factor));
    }

    this.root.append(
      basket,
      sliders,
      el("div", "lists"),
      el("div", "debug"),
    );
  }

  private renderSlider(factor: Factor): HTMLElement {
    const row = el("div", "slider-row");
    const engage = el("input");
    engage.type = "checkbox";
    const range = el("input");
    range.type = "range";
    range.min = "0";
    range.max = "1";
    range.step = "0.01";
    range.value = "0.5";
    range.disabled = true;
    const latent = el("span", "latent", "z = 0.00");

    engage.addEventListener("change", () => {
      this.state.setEngaged(factor.name, engage.checked);
      range.disabled = !engage.checked;
      this.requestUpdate();
    });
    range.addEventListener("input", () => {
      const v = Number.parseFloat(range.value);
      this.state.setSlider(factor.name, v);
      latent.textContent = `z = ${knobToLatent(v).toFixed(2)}`;
      this.requestUpdate();
    });

    row.append(
      engage,
      el("label", undefined, `${factor.name} (${(factor.prevalence * 100).toFixed(0)}%)`),
      range,
      latent,
    );
    return row;
  }

  private renderLists(): void {
    const { baseline, manipulated } = this.state;
    if (!baseline || !manipulated) return;
    const lists = this.root.querySelector(".lists");
    const debug = this.root.querySelector(".debug");
    if (!lists || !debug) return;
    lists.textContent = "";

    const diff = diffLists(baseline, manipulated);
    const bars = el("div", "count-bars");
    for (const row of diff.counts) {
      const line = el("div", "bar-row");
      line.append(
        el("span", "bar-label", row.factor),
        el("span", "bar baseline-bar", String(row.baseline)),
        el("span", "bar manipulated-bar", String(row.manipulated)),
      );
      bars.append(line);
    }
    lists.append(bars);

    const ol = el("ol", "ranked");
    for (const row of diff.rows) {
      const marker =
        row.status === "entered"
          ? " [new]"
          : row.status === "up"
            ? ` [up ${row.delta}]`
            : row.status === "down"
              ? ` [down ${-row.delta!}]`
              : "";
      ol.append(el("li", `item ${row.status}`, `${row.title}${marker}`));
    }
    lists.append(ol);
    if (diff.left.length > 0) {
      lists.append(el("p", "left", `left the list: ${diff.left.join(", ")}`));
    }

    const top20 = diff.counts
      .map((c) => `${c.factor}=${countInTop(manipulated, c.factor, 20)}`)
      .join(" ");
    debug.textContent =
      `baseline ${baseline.digest} | shown ${manipulated.digest}` +
      (diff.identical ? " (identical)" : "") +
      ` | top-20 counts: ${top20}`;
  }

  private renderError(err: unknown): void {
    this.root.textContent = "";
    const box = el("div", "error");
    box.append(el("p", undefined, `service unreachable: ${String(err)}`));
    const retry = el("button", undefined, "retry");
    retry.addEventListener("click", () => void this.start());
    box.append(retry);
    this.root.append(box);
  }
}
