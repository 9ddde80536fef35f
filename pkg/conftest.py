# -*- coding: utf-8 -*-

pytest_plugins = [
    u'claf.tests.fixtures'
]
