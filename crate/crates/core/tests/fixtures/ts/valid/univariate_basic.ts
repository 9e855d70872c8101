@problemName BasicUni
@timeStamps false
@missing false
@univariate true
@equalLength true
@seriesLength 5
@classLabel true up flat down
@data
0.1,0.2,0.3,0.4,0.5:up
0.5,0.5,0.5,0.5,0.5:flat
0.5,0.4,0.3,0.2,0.1:down
0.0,0.25,0.5,0.75,1.0:up
1.0,0.75,0.5,0.25,0.0:down
