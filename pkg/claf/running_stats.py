'''Tools for keeping track of quantities over a long training run.

StatsCount - when you are counting incidences of a small set of outcomes
RunningMean - when you want the mean of a value reported once per batch

Examples:

from claf.running_stats import StatsCount, RunningMean
phase_stats = StatsCount()
epoch_loss = RunningMean()
for batch in batches:
    epoch_loss.add(step(batch))
    phase_stats.increment('encoder batches')
log.info('loss %.4f', epoch_loss.mean)
log.info(phase_stats.report())
> encoder batches: 16
'''
import datetime


class StatsCount(dict):
    '''Counts per outcome, plus the time since the tally started.'''

    def __init__(self, *args, **kwargs):
        self._start_time = datetime.datetime.now()
        super(StatsCount, self).__init__(*args, **kwargs)

    def increment(self, category, amount=1):
        self[category] = self.get(category, 0) + amount

    @property
    def total(self):
        return sum(self.values())

    def fraction(self, category):
        '''Share of all counted outcomes falling in ``category``.'''
        if not self.total:
            return 0.0
        return self.get(category, 0) / float(self.total)

    def report(self, indent=1, order_by_title=False, show_time_taken=True):
        prefix = '\t' * indent
        if order_by_title:
            items = sorted(self.items())
        else:
            items = sorted(self.items(), key=lambda item: -item[1])
        lines = [prefix + '%s: %s' % item for item in items] or [prefix + 'None']
        if show_time_taken:
            lines.append(prefix + 'Time taken (h:m:s): %s'
                         % (datetime.datetime.now() - self._start_time))
        return '\n'.join(lines)


class RunningMean(object):
    '''Mean of the values added so far, accumulated in a fixed order.'''

    def __init__(self):
        self.total = 0.0
        self.count = 0

    def add(self, value, weight=1):
        self.total += float(value) * weight
        self.count += weight

    @property
    def mean(self):
        if not self.count:
            return None
        return self.total / self.count
